//! Oracle routines shared by the integration tests and the acceptance target.
//! Each returns a short summary on success and a description of the first
//! mismatch on failure.

use std::collections::HashSet;

use mhpl::cluster::PseudoLabels;
use mhpl::data::FeatureSet;
use mhpl::graph::{build_graph, NeighborGraph};
use mhpl::loss::{
    div_loss, entropy_loss, nf_loss_labeled, nf_loss_unlabeled, total_loss, LabeledSample,
    LossWeights, PseudoSample,
};
use mhpl::model::AdaptModel;
use mhpl::query::{compute_nau, ndr_select, UncertaintyScores};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{brute_force_top_q, dot, random_model, random_pseudo_labels, rng, unit_set};

pub type Check = Result<String, String>;

/// `build_graph` against the O(n²) oracle on `instances` random sets with n ≤ 500.
/// Every fourth instance duplicates rows and every third uses signed features so
/// that exact ties and clamped zeros occur.
pub fn graph_exactness(instances: u64) -> Check {
    let mut largest = 0;
    for seed in 0..instances {
        let mut r = rng(0x6e6e_0000 + seed);
        let n = r.random_range(20..=500usize);
        let d = r.random_range(2..=16usize);
        let q = r.random_range(1..=20usize.min(n - 1));
        let mut fs = unit_set(&mut r, n, d, 2);
        if seed % 4 == 0 {
            let mut rows: Vec<Vec<f64>> = (0..n).map(|i| fs.row(i).to_vec()).collect();
            for i in (1..n).step_by(3) {
                rows[i] = rows[i - 1].clone();
            }
            fs = FeatureSet::new(mhpl::data::Matrix::from_rows(&rows).unwrap(), None, 2).unwrap();
        }
        if seed % 3 != 0 {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| fs.row(i).iter().map(|v| v.abs()).collect())
                .collect();
            fs = FeatureSet::new(mhpl::data::Matrix::from_rows(&rows).unwrap(), None, 2).unwrap();
        }
        let g = build_graph(&fs, q).map_err(|e| format!("instance {seed}: {e}"))?;
        let oracle = brute_force_top_q(&fs, q);
        for (i, want) in oracle.iter().enumerate() {
            let idx: Vec<usize> = want.iter().map(|p| p.0).collect();
            let sim: Vec<f64> = want.iter().map(|p| p.1).collect();
            if g.neighbors(i) != idx.as_slice() || g.similarities(i) != sim.as_slice() {
                return Err(format!(
                    "instance {seed} (n={n}, d={d}, q={q}) row {i}: got {:?}, oracle {:?}",
                    g.neighbors(i),
                    idx
                ));
            }
        }
        largest = largest.max(n);
    }
    Ok(format!("{instances} instances, largest n={largest}"))
}

/// Straight-line transcription of the admission rule with its fallback pass.
/// The nearest neighbor is recomputed by brute force from the features.
pub fn reference_ndr(fs: &FeatureSet, nau: &[f64], m: usize) -> (Vec<usize>, Vec<bool>, Vec<usize>) {
    let n = fs.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nau[b].partial_cmp(&nau[a]).unwrap().then(a.cmp(&b)));
    let nearest = |i: usize| {
        let mut best = usize::MAX;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = dot(fs.row(i), fs.row(j)).clamp(0.0, 1.0);
            if s > best_sim {
                best_sim = s;
                best = j;
            }
        }
        best
    };
    let mut selected = Vec::new();
    let mut skipped = Vec::new();
    for &i in &order {
        if selected.len() == m {
            break;
        }
        if selected.contains(&nearest(i)) {
            skipped.push(i);
        } else {
            selected.push(i);
        }
    }
    let mut fallback = vec![false; selected.len()];
    for &i in &skipped {
        if selected.len() == m {
            break;
        }
        selected.push(i);
        fallback.push(true);
    }
    (selected, fallback, skipped)
}

/// Random instance for the selection oracle. Odd seeds quantize NAU to force ties.
pub fn ndr_instance(seed: u64, n: usize, q: usize) -> (FeatureSet, NeighborGraph, UncertaintyScores) {
    let mut r = rng(0x4e44_5200 + seed);
    let d = r.random_range(2..=6usize);
    let k = r.random_range(2..=4usize);
    let fs = unit_set(&mut r, n, d, k);
    let g = build_graph(&fs, q).unwrap();
    let pl: PseudoLabels = random_pseudo_labels(&mut r, n, k);
    let mut scores = compute_nau(&fs, &g, &pl).unwrap();
    if seed % 2 == 1 {
        scores.nau.iter_mut().for_each(|v| *v = (*v * 4.0).round() / 4.0);
    }
    (fs, g, scores)
}

pub fn ndr_equivalence(instances: u64, n: usize, q: usize, m: usize) -> Check {
    let mut skips = 0;
    for seed in 0..instances {
        let (fs, g, scores) = ndr_instance(seed, n, q);
        let got = ndr_select(&scores, &g, m).map_err(|e| format!("instance {seed}: {e}"))?;
        let (sel, fb, skipped) = reference_ndr(&fs, &scores.nau, m);
        let got_skipped: Vec<usize> = got.skipped.iter().map(|s| s.index).collect();
        if got.selected != sel || got.fallback != fb || got_skipped != skipped {
            return Err(format!(
                "instance {seed}: selected {:?} vs reference {:?}, skipped {:?} vs {:?}",
                got.selected, sel, got_skipped, skipped
            ));
        }
        skips += skipped.len();
    }
    Ok(format!("{instances} instances (n={n}, q={q}, m={m}), {skips} skips replayed"))
}

struct GradCase {
    model: AdaptModel,
    xs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    np: Vec<f64>,
    n_labeled: usize,
    weights: LossWeights,
}

impl GradCase {
    fn labeled(&self) -> Vec<LabeledSample<'_>> {
        (0..self.n_labeled)
            .map(|i| LabeledSample {
                features: &self.xs[i],
                label: self.labels[i],
                np_weight: self.np[i],
            })
            .collect()
    }

    fn unlabeled(&self) -> Vec<PseudoSample<'_>> {
        (self.n_labeled..self.xs.len())
            .map(|i| PseudoSample {
                features: &self.xs[i],
                pseudo_label: self.labels[i],
            })
            .collect()
    }

    fn all(&self) -> Vec<&[f64]> {
        self.xs.iter().map(Vec::as_slice).collect()
    }

    /// Closest approach of any hidden pre-activation to the kink of the leaky unit.
    fn kink_margin(&self) -> f64 {
        self.xs
            .iter()
            .flat_map(|x| self.model.forward(x).pre)
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

fn grad_case(seed: u64) -> GradCase {
    let mut r = rng(0x6772_6164 + seed);
    loop {
        let d = r.random_range(1..=8usize);
        let k = r.random_range(2..=4usize);
        let h = r.random_range(0..=6usize);
        let n_labeled = r.random_range(1..=4usize);
        let n_unlabeled = r.random_range(1..=4usize);
        let xs: Vec<Vec<f64>> = (0..n_labeled + n_unlabeled)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        let case = GradCase {
            model: random_model(&mut r, d, k, h),
            labels: (0..xs.len()).map(|_| r.random_range(0..k)).collect(),
            np: (0..xs.len()).map(|_| r.random::<f64>() * (k as f64).ln()).collect(),
            xs,
            n_labeled,
            weights: LossWeights {
                alpha: 0.5 + 3.0 * r.random::<f64>(),
                beta: 0.1 + r.random::<f64>(),
            },
        };
        // A central difference straddling the kink measures a one-sided slope;
        // such draws are resampled.
        if case.kink_margin() > 1e-3 {
            return case;
        }
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor: gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

fn compare(name: &str, seed: u64, model: &AdaptModel, analytic: &[f64], f: &dyn Fn(&AdaptModel) -> f64) -> Result<f64, String> {
    let base = model.params().to_vec();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for p in 0..base.len() {
        let mut plus = base.clone();
        plus[p] += FD_STEP;
        probe.set_params(plus).unwrap();
        let fp = f(&probe);
        let mut minus = base.clone();
        minus[p] -= FD_STEP;
        probe.set_params(minus).unwrap();
        let fm = f(&probe);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let rel = (analytic[p] - numeric).abs() / analytic[p].abs().max(numeric.abs()).max(FD_FLOOR);
        if rel > FD_REL_TOL {
            return Err(format!(
                "config {seed} {name} param {p}: analytic {} vs numeric {numeric} (rel {rel:.2e})",
                analytic[p]
            ));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Analytic gradients of every loss against central differences.
pub fn gradient_suite(configs: u64) -> Check {
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for seed in 0..configs {
        let c = grad_case(seed);
        let m = &c.model;
        let (l, u, all) = (c.labeled(), c.unlabeled(), c.all());
        let w = c.weights;
        let err = |e: mhpl::Error| format!("config {seed}: {e}");

        let g = nf_loss_labeled(m, &l, w.alpha).map_err(err)?;
        worst = worst.max(compare("nf_labeled", seed, m, &g.grad, &|p| {
            nf_loss_labeled(p, &l, w.alpha).unwrap().value
        })?);
        let g = nf_loss_unlabeled(m, &u, w.beta).map_err(err)?;
        worst = worst.max(compare("nf_unlabeled", seed, m, &g.grad, &|p| {
            nf_loss_unlabeled(p, &u, w.beta).unwrap().value
        })?);
        let g = entropy_loss(m, &all).map_err(err)?;
        worst = worst.max(compare("entropy", seed, m, &g.grad, &|p| entropy_loss(p, &all).unwrap().value)?);
        let g = div_loss(m, &all).map_err(err)?;
        worst = worst.max(compare("div", seed, m, &g.grad, &|p| div_loss(p, &all).unwrap().value)?);
        let (_, g) = total_loss(m, &l, &u, w).map_err(err)?;
        worst = worst.max(compare("total", seed, m, &g, &|p| total_loss(p, &l, &u, w).unwrap().0.total)?);
        params += m.params().len();
    }
    Ok(format!(
        "{configs} configs, {params} parameters per loss, worst relative error {worst:.2e}"
    ))
}

/// Every non-fallback admission had its nearest neighbor outside the selection so far.
pub fn diversity_invariant_holds(sel: &[usize], fallback: &[bool], g: &NeighborGraph) -> bool {
    let mut seen = HashSet::new();
    for (&i, &fb) in sel.iter().zip(fallback) {
        if !fb && seen.contains(&g.nearest(i).unwrap()) {
            return false;
        }
        seen.insert(i);
    }
    true
}
