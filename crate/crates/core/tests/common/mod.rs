#![allow(dead_code)]

pub mod checks;
pub mod cli;
pub mod trends;

use mhpl::cluster::PseudoLabels;
use mhpl::data::{normalize_rows, FeatureSet, Matrix};
use mhpl::model::AdaptModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

/// Row-normalized Gaussian features with `classes` nominal classes and no labels.
pub fn unit_set(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> FeatureSet {
    let rows = gaussian_rows(rng, n, d);
    let fs = FeatureSet::new(Matrix::from_rows(&rows).unwrap(), None, classes).unwrap();
    normalize_rows(&fs).set
}

pub fn random_pseudo_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> PseudoLabels {
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    PseudoLabels::from_labels(labels, classes).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// O(n²) top-q by clamped cosine similarity, self excluded, ties to the lower index.
pub fn brute_force_top_q(fs: &FeatureSet, q: usize) -> Vec<Vec<(usize, f64)>> {
    (0..fs.n())
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..fs.n())
                .filter(|&j| j != i)
                .map(|j| (j, dot(fs.row(i), fs.row(j)).clamp(0.0, 1.0)))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(q);
            all
        })
        .collect()
}

/// Random model with every adapter parameter perturbed, hidden branch included.
pub fn random_model(rng: &mut ChaCha8Rng, d: usize, k: usize, hidden: usize) -> AdaptModel {
    let w: Vec<f64> = (0..k * d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let b: Vec<f64> = (0..k).map(|_| 0.5 * rng.random::<f64>() - 0.25).collect();
    let base = AdaptModel::from_head(w, b, d).unwrap();
    let mut model = base.with_hidden(hidden, rng.random());
    let params: Vec<f64> = model
        .params()
        .iter()
        .map(|p| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            p + 0.3 * z
        })
        .collect();
    model.set_params(params).unwrap();
    model
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
