//! Cluster-derived pseudo-labels.
//!
//! Round 0 builds probability-weighted centroids from the model's soft
//! predictions; each further round recomputes hard centroids from the current
//! assignment. Assignment is cosine argmax with ties going to the lower class.

use rayon::prelude::*;

use crate::data::{dot, norm, FeatureSet, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_ROUNDS: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    labels: Vec<usize>,
    classes: usize,
    centroids: Matrix,
    degenerate: Vec<usize>,
    rounds: usize,
}

impl PseudoLabels {
    /// Wrap an explicit labeling. No centroids are attached (a `K x 0` matrix).
    pub fn from_labels(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        Ok(PseudoLabels {
            labels,
            classes,
            centroids: Matrix::zeros(classes, 0),
            degenerate: Vec::new(),
            rounds: 0,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    /// Classes whose centroid has zero norm; they never win an assignment.
    pub fn degenerate_classes(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

fn check_probs(probs: &Matrix, n: usize) -> Result<()> {
    if probs.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows for {n} samples",
            probs.rows()
        )));
    }
    for (i, row) in probs.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::NotAProbability(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Normalize centroid rows in place and return the zero-norm ones.
fn normalize_centroids(c: &mut Matrix) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for k in 0..c.rows() {
        let row = c.row_mut(k);
        let nrm = norm(row);
        if nrm == 0.0 || !nrm.is_finite() {
            row.iter_mut().for_each(|v| *v = 0.0);
            degenerate.push(k);
        } else {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
    }
    degenerate
}

/// Cosine argmax against `centroids`; lower class wins ties, degenerate classes never win.
pub fn assign(fs: &FeatureSet, centroids: &Matrix, degenerate: &[usize]) -> Vec<usize> {
    (0..fs.n())
        .into_par_iter()
        .map(|i| {
            let z = fs.row(i);
            let mut best = (0usize, f64::NEG_INFINITY);
            for k in 0..centroids.rows() {
                if degenerate.contains(&k) {
                    continue;
                }
                let s = dot(z, centroids.row(k));
                if s > best.1 {
                    best = (k, s);
                }
            }
            best.0
        })
        .collect()
}

fn hard_centroids(fs: &FeatureSet, labels: &[usize], previous: &Matrix) -> Matrix {
    let (k, d) = (previous.rows(), fs.d());
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (acc, v) in sums.row_mut(l).iter_mut().zip(fs.row(i)) {
            *acc += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let cnt = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v /= cnt);
        }
    }
    sums
}

/// Pseudo-label every sample from soft predictions plus `rounds` hard refinements.
pub fn cluster_assign(fs: &FeatureSet, probs: &Matrix, rounds: usize) -> Result<PseudoLabels> {
    let (n, d, k) = (fs.n(), fs.d(), probs.cols());
    check_probs(probs, n)?;
    if k != fs.classes() {
        return Err(Error::ShapeMismatch(format!(
            "{k} probability columns for {} classes",
            fs.classes()
        )));
    }
    if let Some((row, norm)) = fs.first_unnormalized_row() {
        return Err(Error::NotNormalized { row, norm });
    }

    let mut centroids = Matrix::zeros(k, d);
    let mut mass = vec![0.0; k];
    for i in 0..n {
        let (z, p) = (fs.row(i), probs.row(i));
        for c in 0..k {
            mass[c] += p[c];
            for (acc, v) in centroids.row_mut(c).iter_mut().zip(z) {
                *acc += p[c] * v;
            }
        }
    }
    for c in 0..k {
        if mass[c] == 0.0 {
            return Err(Error::DegenerateClassMass { class: c });
        }
        centroids.row_mut(c).iter_mut().for_each(|v| *v /= mass[c]);
    }
    let mut degenerate = normalize_centroids(&mut centroids);
    let mut labels = assign(fs, &centroids, &degenerate);

    for _ in 0..rounds {
        centroids = hard_centroids(fs, &labels, &centroids);
        degenerate = normalize_centroids(&mut centroids);
        labels = assign(fs, &centroids, &degenerate);
    }

    Ok(PseudoLabels {
        labels,
        classes: k,
        centroids,
        degenerate,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize_rows;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rows: Vec<Vec<f64>>, k: usize) -> FeatureSet {
        normalize_rows(&FeatureSet::new(Matrix::from_rows(&rows).unwrap(), None, k).unwrap()).set
    }

    fn two_clusters() -> (FeatureSet, Matrix, Vec<usize>) {
        let rows = vec![
            vec![1.0, 0.05],
            vec![1.0, -0.05],
            vec![0.98, 0.0],
            vec![0.05, 1.0],
            vec![-0.05, 1.0],
        ];
        let truth = vec![0, 0, 0, 1, 1];
        let probs: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| if t == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        (unit(rows, 2), Matrix::from_rows(&probs).unwrap(), truth)
    }

    #[test]
    fn separated_clusters_recover_truth() {
        let (fs, probs, truth) = two_clusters();
        let pl = cluster_assign(&fs, &probs, 1).unwrap();
        assert_eq!(pl.labels(), truth.as_slice());
        for k in 0..2 {
            assert!((norm(pl.centroids().row(k)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_probs_identical_features_tie_to_class_zero() {
        let fs = unit(vec![vec![0.3, 0.4]; 6], 3);
        let probs = Matrix::from_rows(&vec![vec![1.0 / 3.0; 3]; 6]).unwrap();
        for rounds in 0..3 {
            let pl = cluster_assign(&fs, &probs, rounds).unwrap();
            assert!(pl.labels().iter().all(|&l| l == 0));
        }
        let pl = cluster_assign(&fs, &probs, 0).unwrap();
        assert_eq!(pl.centroids().row(0), pl.centroids().row(1));
        assert_eq!(pl.centroids().row(1), pl.centroids().row(2));
    }

    #[test]
    fn zero_mass_column_is_an_error() {
        let fs = unit(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        let probs = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            cluster_assign(&fs, &probs, 1),
            Err(Error::DegenerateClassMass { class: 1 })
        ));
        let bad = Matrix::from_rows(&[vec![0.7, 0.7], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            cluster_assign(&fs, &bad, 1),
            Err(Error::NotAProbability(_))
        ));
    }

    #[test]
    fn empty_hard_class_keeps_previous_centroid() {
        // Class 1 receives soft mass but loses every sample at assignment.
        let fs = unit(vec![vec![1.0, 0.0], vec![0.9, 0.1]], 2);
        let probs = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.6, 0.4]]).unwrap();
        let soft = cluster_assign(&fs, &probs, 0).unwrap();
        let refined = cluster_assign(&fs, &probs, 1).unwrap();
        assert_eq!(refined.centroids().row(1), soft.centroids().row(1));
        assert!(refined.degenerate_classes().is_empty());
    }

    fn random_case(seed: u64, n: usize, k: usize) -> (FeatureSet, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..4).map(|_| rng.random::<f64>() - 0.3).collect())
            .collect();
        let probs = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect::<Vec<Vec<f64>>>();
        (unit(rows, k), Matrix::from_rows(&probs).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stored_centroids_reproduce_labels(seed in any::<u64>(), rounds in 0usize..4) {
            let (fs, probs) = random_case(seed, 40, 3);
            let pl = cluster_assign(&fs, &probs, rounds).unwrap();
            prop_assert_eq!(assign(&fs, pl.centroids(), pl.degenerate_classes()), pl.labels().to_vec());
            for k in 0..3 {
                let nrm = norm(pl.centroids().row(k));
                prop_assert!(pl.degenerate_classes().contains(&k) || (nrm - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn fixed_point_after_convergence(seed in any::<u64>()) {
            let (fs, probs) = random_case(seed, 40, 3);
            let mut prev = cluster_assign(&fs, &probs, 0).unwrap();
            for r in 1..50 {
                let next = cluster_assign(&fs, &probs, r).unwrap();
                if next.labels() == prev.labels() {
                    let again = cluster_assign(&fs, &probs, r + 1).unwrap();
                    prop_assert_eq!(again.labels(), next.labels());
                    break;
                }
                prev = next;
            }
        }

        #[test]
        fn permutation_equivariant(seed in any::<u64>()) {
            let (fs, probs) = random_case(seed, 30, 3);
            let mut perm: Vec<usize> = (0..30).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            for i in (1..30).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| fs.row(i).to_vec()).collect();
            let prow: Vec<Vec<f64>> = perm.iter().map(|&i| probs.row(i).to_vec()).collect();
            let fs2 = FeatureSet::new(Matrix::from_rows(&rows).unwrap(), None, 3).unwrap();
            let a = cluster_assign(&fs, &probs, 1).unwrap();
            let b = cluster_assign(&fs2, &Matrix::from_rows(&prow).unwrap(), 1).unwrap();
            // Centroid sums are order-dependent in the last bits, so compare labels only.
            for (pos, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b.labels()[pos], a.labels()[i]);
            }
        }
    }
}
