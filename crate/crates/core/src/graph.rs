//! Exact cosine-similarity q-nearest-neighbor graph.
//!
//! Similarities are clamped to `[0, 1]`, a sample is never its own neighbor,
//! and equal similarities are ordered by the lower sample index.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cluster::PseudoLabels;
use crate::data::{dot, FeatureSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    q: usize,
    neighbor_idx: Vec<usize>,
    neighbor_sim: Vec<f64>,
}

/// Clamped cosine similarity between two unit rows.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(0.0, 1.0)
}

/// Descending similarity, then ascending index.
fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn build_graph(fs: &FeatureSet, q: usize) -> Result<NeighborGraph> {
    let n = fs.n();
    if q == 0 || q + 1 > n {
        return Err(Error::NeighborCountOutOfRange {
            q,
            max: n.saturating_sub(1),
        });
    }
    if let Some((row, norm)) = fs.first_unnormalized_row() {
        return Err(Error::NotNormalized { row, norm });
    }

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = fs.row(i);
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, similarity(zi, fs.row(j))))
                .collect();
            if q < cand.len() {
                cand.select_nth_unstable_by(q - 1, rank);
                cand.truncate(q);
            }
            cand.sort_unstable_by(rank);
            cand
        })
        .collect();

    let mut neighbor_idx = Vec::with_capacity(n * q);
    let mut neighbor_sim = Vec::with_capacity(n * q);
    for row in rows {
        for (j, s) in row {
            neighbor_idx.push(j);
            neighbor_sim.push(s);
        }
    }
    Ok(NeighborGraph {
        q,
        neighbor_idx,
        neighbor_sim,
    })
}

impl NeighborGraph {
    /// Assemble a graph from explicit per-row neighbor lists, checking every invariant.
    pub fn from_parts(q: usize, neighbors: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = neighbors.len();
        if q == 0 || q + 1 > n {
            return Err(Error::NeighborCountOutOfRange {
                q,
                max: n.saturating_sub(1),
            });
        }
        let mut neighbor_idx = Vec::with_capacity(n * q);
        let mut neighbor_sim = Vec::with_capacity(n * q);
        for (i, row) in neighbors.into_iter().enumerate() {
            if row.len() != q {
                return Err(Error::DimensionMismatch {
                    row: i,
                    expected: q,
                    found: row.len(),
                });
            }
            let mut prev = f64::INFINITY;
            for (j, s) in row {
                if j >= n {
                    return Err(Error::IndexOutOfRange { index: j, n });
                }
                if j == i {
                    return Err(Error::ShapeMismatch(format!("row {i} lists itself")));
                }
                if !(0.0..=1.0).contains(&s) || s > prev {
                    return Err(Error::ShapeMismatch(format!(
                        "row {i}: similarities must be non-increasing in [0, 1]"
                    )));
                }
                prev = s;
                neighbor_idx.push(j);
                neighbor_sim.push(s);
            }
        }
        Ok(NeighborGraph {
            q,
            neighbor_idx,
            neighbor_sim,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.neighbor_idx.len() / self.q
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbor_idx[i * self.q..(i + 1) * self.q]
    }

    pub fn similarities(&self, i: usize) -> &[f64] {
        &self.neighbor_sim[i * self.q..(i + 1) * self.q]
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        Ok(())
    }

    /// Most similar other sample.
    pub fn nearest(&self, i: usize) -> Result<usize> {
        self.check(i)?;
        Ok(self.neighbor_idx[i * self.q])
    }

    /// Fraction of the q neighbors of `i` carrying each pseudo-label.
    pub fn neighbor_label_distribution(&self, pl: &PseudoLabels, i: usize) -> Result<Vec<f64>> {
        self.check(i)?;
        if pl.labels().len() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} pseudo-labels for a {}-sample graph",
                pl.labels().len(),
                self.n()
            )));
        }
        Ok(label_distribution(
            self.neighbors(i).iter().map(|&j| pl.labels()[j]),
            pl.classes(),
        ))
    }

    /// Debug dump, one `i,rank,neighbor,sim` line per edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,rank,neighbor,sim\n");
        for i in 0..self.n() {
            for (r, (&j, &s)) in self.neighbors(i).iter().zip(self.similarities(i)).enumerate() {
                let _ = writeln!(out, "{i},{r},{j},{s}");
            }
        }
        out
    }
}

pub(crate) fn label_distribution(labels: impl Iterator<Item = usize>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    let mut q = 0usize;
    for l in labels {
        counts[l] += 1;
        q += 1;
    }
    counts.into_iter().map(|c| c as f64 / q as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::PseudoLabels;
    use crate::data::{normalize_rows, Matrix};

    fn unit_set(rows: Vec<Vec<f64>>) -> FeatureSet {
        let fs = FeatureSet::new(Matrix::from_rows(&rows).unwrap(), None, 2).unwrap();
        normalize_rows(&fs).set
    }

    fn angles(deg: &[f64]) -> FeatureSet {
        unit_set(
            deg.iter()
                .map(|a| {
                    let r = a.to_radians();
                    vec![r.cos(), r.sin()]
                })
                .collect(),
        )
    }

    #[test]
    fn geometric_nearest() {
        let g = build_graph(&angles(&[0.0, 10.0, 90.0]), 1).unwrap();
        assert_eq!(g.nearest(0).unwrap(), 1);
        assert_eq!(g.nearest(2).unwrap(), 1);
        assert!(g.nearest(3).is_err());
    }

    #[test]
    fn duplicates_have_unit_similarity_and_lower_index_wins() {
        let g = build_graph(&unit_set(vec![vec![1.0, 0.0]; 3]), 2).unwrap();
        for i in 0..3 {
            assert_eq!(g.similarities(i), &[1.0, 1.0]);
        }
        let g = build_graph(
            &unit_set(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]),
            1,
        )
        .unwrap();
        assert_eq!(g.nearest(0).unwrap(), 1);
        assert_eq!(g.nearest(2).unwrap(), 0);
    }

    #[test]
    fn opposite_vectors_clamp_to_zero() {
        let g = build_graph(&angles(&[0.0, 180.0]), 1).unwrap();
        assert_eq!(g.similarities(0), &[0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let fs = angles(&[0.0, 10.0, 20.0]);
        assert!(matches!(
            build_graph(&fs, 3),
            Err(Error::NeighborCountOutOfRange { .. })
        ));
        assert!(build_graph(&fs, 0).is_err());
        let raw = FeatureSet::new(Matrix::from_rows(&[vec![2.0], vec![1.0]]).unwrap(), None, 2)
            .unwrap();
        assert!(matches!(
            build_graph(&raw, 1),
            Err(Error::NotNormalized { row: 0, .. })
        ));
    }

    #[test]
    fn label_distribution_matches_counts() {
        // 11 samples: sample 0 plus ten neighbors split 3/4/3.
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
        let nbrs: Vec<Vec<(usize, f64)>> = (0..11)
            .map(|i| {
                (0..11)
                    .filter(|&j| j != i)
                    .take(10)
                    .map(|j| (j, 0.5))
                    .collect()
            })
            .collect();
        let g = NeighborGraph::from_parts(10, nbrs).unwrap();
        let pl = PseudoLabels::from_labels(labels, 3).unwrap();
        let p = g.neighbor_label_distribution(&pl, 0).unwrap();
        let expect = [0.3, 0.4, 0.3];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_distribution_pure_and_skewed() {
        let p = label_distribution([0usize; 10].into_iter(), 3);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let labels = [0, 0, 1, 2, 2, 2, 2, 2, 2, 2];
        let p = label_distribution(labels.into_iter(), 3);
        for (a, b) in p.iter().zip([0.2, 0.1, 0.7]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_one_line_per_edge() {
        let g = build_graph(&angles(&[0.0, 10.0, 90.0]), 2).unwrap();
        assert_eq!(g.to_csv().lines().count(), 1 + 6);
    }
}
