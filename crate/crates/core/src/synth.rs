//! Two-domain covariate-shift benchmarks with ground-truth domain tags.
//!
//! Class means are drawn in a spherical cap around a random pole so that
//! classes sit close enough for a mean displacement to matter. Target-like
//! samples come from means pushed `shift · sigma` toward the next class
//! (cyclically), which preserves the labeling function while moving part of
//! the target domain toward a decision boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{dot, norm, DomainTag, FeatureSet, Matrix};
use crate::error::{Error, Result};
use crate::model::{argmax, softmax, AdaptModel};
use crate::train::EpochSampler;

/// Spread of class means around the pole, relative to the pole's unit length.
pub const CLASS_SPREAD: f64 = 0.6;
const MEAN_ATTEMPTS: usize = 2000;
pub const SOURCE_ACCURACY_TARGET: f64 = 0.99;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub sigma: f64,
    pub shift: f64,
    pub target_like_frac: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            classes: 3,
            dim: 16,
            n_source: 600,
            n_target: 600,
            sigma: 0.08,
            shift: 4.0,
            target_like_frac: 0.5,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return Err(Error::InvalidClassCount(self.classes));
        }
        if self.dim < 2 {
            return bad(format!("dimension must be >= 2, got {}", self.dim));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::EmptySet);
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return bad(format!("shift must be >= 0, got {}", self.shift));
        }
        if !(0.0..=1.0).contains(&self.target_like_frac) {
            return bad(format!(
                "target_like_frac must lie in [0, 1], got {}",
                self.target_like_frac
            ));
        }
        Ok(())
    }

    /// Minimum pairwise distance between normalized class means.
    pub fn min_separation(&self) -> f64 {
        4.0 * self.sigma / (self.dim as f64).sqrt()
    }

    pub fn target_like_count(&self) -> usize {
        (self.target_like_frac * self.n_target as f64).round() as usize
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Largest number of points on the unit circle with pairwise chord >= `sep`.
fn circle_capacity(sep: f64) -> usize {
    if sep >= 2.0 {
        return 2;
    }
    let angle = 2.0 * (sep / 2.0).asin();
    (2.0 * std::f64::consts::PI / angle).floor() as usize
}

fn class_means(spec: &ShiftSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let (k, d) = (spec.classes, spec.dim);
    let sep = spec.min_separation();
    let infeasible = Error::SeparationInfeasible {
        classes: k,
        dim: d,
        min_separation: sep,
    };
    if d == 2 && k > circle_capacity(sep) {
        return Err(infeasible);
    }
    let scale = CLASS_SPREAD / (d as f64).sqrt();
    for _ in 0..MEAN_ATTEMPTS {
        let pole = unit(gaussian(rng, d));
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let g = gaussian(rng, d);
                unit(pole.iter().zip(&g).map(|(p, x)| p + scale * x).collect())
            })
            .collect();
        let ok = (0..k).all(|a| {
            (a + 1..k).all(|b| {
                let diff: Vec<f64> = means[a].iter().zip(&means[b]).map(|(x, y)| x - y).collect();
                norm(&diff) >= sep
            })
        });
        if ok {
            return Ok(means);
        }
    }
    Err(infeasible)
}

fn sample_row(center: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect();
    if norm(&v) == 0.0 {
        v[0] = 1.0;
    }
    unit(v)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Source and target sets, both row-normalized and fully labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub source: FeatureSet,
    pub target: FeatureSet,
    pub class_means: Vec<Vec<f64>>,
}

pub fn generate(spec: &ShiftSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng)?;
    let (k, d) = (spec.classes, spec.dim);
    let shifted: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let next = &means[(c + 1) % k];
            let toward = unit(next.iter().zip(&means[c]).map(|(a, b)| a - b).collect());
            means[c]
                .iter()
                .zip(&toward)
                .map(|(m, u)| m + spec.shift * spec.sigma * u)
                .collect()
        })
        .collect();

    let mut source = Vec::with_capacity(spec.n_source * d);
    let mut source_labels = Vec::with_capacity(spec.n_source);
    for pos in shuffled(spec.n_source, &mut rng) {
        let c = pos % k;
        source.extend(sample_row(&means[c], spec.sigma, &mut rng));
        source_labels.push(c);
    }

    let n_tl = spec.target_like_count();
    let mut target = Vec::with_capacity(spec.n_target * d);
    let mut target_labels = Vec::with_capacity(spec.n_target);
    let mut tags = Vec::with_capacity(spec.n_target);
    for pos in shuffled(spec.n_target, &mut rng) {
        let c = pos % k;
        let (center, tag) = if pos < n_tl {
            (&shifted[c], DomainTag::TargetLike)
        } else {
            (&means[c], DomainTag::SourceLike)
        };
        target.extend(sample_row(center, spec.sigma, &mut rng));
        target_labels.push(c);
        tags.push(tag);
    }

    let source_tags = vec![DomainTag::SourceLike; spec.n_source];
    Ok(Benchmark {
        source: FeatureSet::with_tags(
            Matrix::from_vec(spec.n_source, d, source)?,
            Some(source_labels),
            k,
            Some(source_tags),
        )?,
        target: FeatureSet::with_tags(
            Matrix::from_vec(spec.n_target, d, target)?,
            Some(target_labels),
            k,
            Some(tags),
        )?,
        class_means: means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub source_like: usize,
    pub target_like: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDomain<T> {
    pub source: T,
    pub target: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: ShiftSpec,
    pub seed: u64,
    pub per_class_counts: PerDomain<Vec<usize>>,
    pub tag_counts: PerDomain<DomainCounts>,
}

fn class_counts(fs: &FeatureSet) -> Vec<usize> {
    let mut c = vec![0; fs.classes()];
    for &l in fs.labels().unwrap_or(&[]) {
        c[l] += 1;
    }
    c
}

fn tag_counts(fs: &FeatureSet) -> DomainCounts {
    let mut out = DomainCounts {
        source_like: 0,
        target_like: 0,
        unknown: 0,
    };
    for t in fs.tags().unwrap_or(&[]) {
        match t {
            DomainTag::SourceLike => out.source_like += 1,
            DomainTag::TargetLike => out.target_like += 1,
            DomainTag::Unknown => out.unknown += 1,
        }
    }
    out
}

impl Benchmark {
    pub fn manifest(&self, spec: &ShiftSpec) -> Manifest {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            spec: spec.clone(),
            seed: spec.seed,
            per_class_counts: PerDomain {
                source: class_counts(&self.source),
                target: class_counts(&self.target),
            },
            tag_counts: PerDomain {
                source: tag_counts(&self.source),
                target: tag_counts(&self.target),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTraining {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Target distribution `(1 − ε)·onehot + ε/K`.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for SourceTraining {
    fn default() -> Self {
        SourceTraining {
            lr: 0.5,
            momentum: 0.9,
            batch_size: 64,
            epochs: 60,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceFit {
    pub model: AdaptModel,
    pub train_accuracy: f64,
    /// Whether `train_accuracy` reached [`SOURCE_ACCURACY_TARGET`].
    pub converged: bool,
}

/// Softmax regression of a linear head on labeled source features; the
/// returned model has an identity adapter.
pub fn train_source_head(source: &FeatureSet, opts: SourceTraining) -> Result<SourceFit> {
    let labels = source.labels().ok_or(Error::MissingInput {
        strategy: "source training",
        input: "source labels",
    })?;
    if opts.batch_size == 0 || opts.epochs == 0 || !(opts.lr > 0.0) || !(0.0..1.0).contains(&opts.label_smoothing) {
        return Err(Error::InvalidConfig(
            "source training needs lr > 0, batch_size >= 1, epochs >= 1, label_smoothing in [0, 1)".into(),
        ));
    }
    let (n, d, k) = (source.n(), source.d(), source.classes());
    let np = k * d + k;
    let mut params = vec![0.0; np];
    let mut velocity = vec![0.0; np];
    let mut sampler = EpochSampler::new(n, opts.seed);
    let iters = n.div_ceil(opts.batch_size);
    for _ in 0..opts.epochs {
        sampler.start_epoch();
        for _ in 0..iters {
            let batch = sampler.next_batch(opts.batch_size);
            let mut grad = vec![0.0; np];
            let b = batch.len() as f64;
            for &i in &batch {
                let x = source.row(i);
                let logits: Vec<f64> = (0..k)
                    .map(|c| dot(&params[c * d..(c + 1) * d], x) + params[k * d + c])
                    .collect();
                let mut p = softmax(&logits);
                let eps = opts.label_smoothing;
                p.iter_mut().for_each(|v| *v -= eps / k as f64);
                p[labels[i]] -= 1.0 - eps;
                for c in 0..k {
                    let g = p[c] / b;
                    for (acc, v) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *acc += g * v;
                    }
                    grad[k * d + c] += g;
                }
            }
            for ((w, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = opts.momentum * *v + g;
                *w -= opts.lr * *v;
            }
        }
    }
    let model = AdaptModel::from_head(params[..k * d].to_vec(), params[k * d..].to_vec(), d)?;
    let probs = model.predict_proba(source);
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    let train_accuracy = hits as f64 / n as f64;
    Ok(SourceFit {
        model,
        train_accuracy,
        converged: train_accuracy >= SOURCE_ACCURACY_TARGET,
    })
}

/// Accuracy of `model` restricted to target samples with the given tag.
pub fn accuracy_on_tag(model: &AdaptModel, fs: &FeatureSet, tag: DomainTag) -> Option<f64> {
    let (labels, tags) = (fs.labels()?, fs.tags()?);
    let pred = model.predict(fs);
    let (mut hit, mut total) = (0usize, 0usize);
    for i in 0..fs.n() {
        if tags[i] == tag {
            total += 1;
            hit += usize::from(pred[i] == labels[i]);
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}
