//! Trainable adapter in front of a frozen linear classifier head.
//!
//! `adapter(x) = A x + b [+ W2 · leaky(W1 x + b1)]`, `logits = H adapter(x) + c`.
//! The adapter starts as the identity (`A = I`, `b = 0`, `W2 = 0`), so an
//! untrained model reproduces the source head exactly.
//!
//! Adapter parameters live in one flat vector laid out as
//! `A (d*d, row-major) | b (d) | W1 (h*d) | b1 (h) | W2 (d*h)`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{normalize_rows, FeatureSet, Matrix};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"MHC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptModel {
    dim: usize,
    classes: usize,
    hidden: usize,
    params: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

pub fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn param_count(dim: usize, hidden: usize) -> usize {
    dim * dim + dim + hidden * dim + hidden + dim * hidden
}

impl AdaptModel {
    /// Identity adapter over a `classes x dim` head.
    pub fn from_head(head_w: Vec<f64>, head_b: Vec<f64>, dim: usize) -> Result<Self> {
        let classes = head_b.len();
        if classes < 2 {
            return Err(Error::InvalidClassCount(classes));
        }
        if dim == 0 || head_w.len() != classes * dim {
            return Err(Error::ShapeMismatch(format!(
                "head weights have {} entries, expected {classes}x{dim}",
                head_w.len()
            )));
        }
        let mut params = vec![0.0; param_count(dim, 0)];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Ok(AdaptModel {
            dim,
            classes,
            hidden: 0,
            params,
            head_w,
            head_b,
        })
    }

    /// Add a hidden branch of width `hidden`; `W1` is drawn N(0, 1/d) under `seed`
    /// and `W2` is zero, so the model's output does not change.
    pub fn with_hidden(&self, hidden: usize, seed: u64) -> Self {
        let d = self.dim;
        let mut params = self.params[..d * d + d].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
        params.extend((0..hidden * d).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, hidden + d * hidden));
        AdaptModel {
            hidden,
            params,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} adapter parameters, expected {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.head_w
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_b
    }

    pub(crate) fn head_row(&self, k: usize) -> &[f64] {
        &self.head_w[k * self.dim..(k + 1) * self.dim]
    }

    pub(crate) fn offsets(&self) -> ParamOffsets {
        let d = self.dim;
        let h = self.hidden;
        let b = d * d;
        let w1 = b + d;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        ParamOffsets { b, w1, b1, w2 }
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        let (d, h) = (self.dim, self.hidden);
        let o = self.offsets();
        let p = &self.params;
        let mut features: Vec<f64> = (0..d)
            .map(|r| {
                let row = &p[r * d..(r + 1) * d];
                row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + p[o.b + r]
            })
            .collect();
        let mut pre = Vec::with_capacity(h);
        let mut act = Vec::with_capacity(h);
        if h > 0 {
            for j in 0..h {
                let row = &p[o.w1 + j * d..o.w1 + (j + 1) * d];
                let v = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + p[o.b1 + j];
                pre.push(v);
                act.push(leaky(v));
            }
            for (r, f) in features.iter_mut().enumerate() {
                let row = &p[o.w2 + r * h..o.w2 + (r + 1) * h];
                *f += row.iter().zip(&act).map(|(a, v)| a * v).sum::<f64>();
            }
        }
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| {
                self.head_row(k)
                    .iter()
                    .zip(&features)
                    .map(|(w, f)| w * f)
                    .sum::<f64>()
                    + self.head_b[k]
            })
            .collect();
        let probs = softmax(&logits);
        Activations {
            pre,
            act,
            features,
            logits,
            probs,
        }
    }

    pub fn predict_proba(&self, fs: &FeatureSet) -> Matrix {
        let mut out = Matrix::zeros(fs.n(), self.classes);
        for i in 0..fs.n() {
            out.row_mut(i).copy_from_slice(&self.forward(fs.row(i)).probs);
        }
        out
    }

    pub fn predict(&self, fs: &FeatureSet) -> Vec<usize> {
        let probs = self.predict_proba(fs);
        probs.iter_rows().map(argmax).collect()
    }

    /// Adapter outputs, row-normalized, as a feature set carrying `fs`'s labels and tags.
    pub fn embed(&self, fs: &FeatureSet) -> Result<FeatureSet> {
        let mut out = Matrix::zeros(fs.n(), self.dim);
        for i in 0..fs.n() {
            out.row_mut(i).copy_from_slice(&self.forward(fs.row(i)).features);
        }
        Ok(normalize_rows(&fs.with_features(out)?).set)
    }

    /// Fraction of samples whose argmax prediction matches the stored labels.
    pub fn accuracy(&self, fs: &FeatureSet) -> Option<f64> {
        let labels = fs.labels()?;
        let pred = self.predict(fs);
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Some(hits as f64 / fs.n() as f64)
    }

    /// Versioned little-endian checkpoint:
    /// `b"MHC1" | version u32 | d u32 | K u32 | h u32 | adapter f64s | head W f64s | head b f64s`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.dim as u32,
            self.classes as u32,
            self.hidden as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.params.iter().chain(&self.head_w).chain(&self.head_b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err("missing MHC1 magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let (dim, classes, hidden) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let np = param_count(dim, hidden);
        let total = np + classes * dim + classes;
        let body = &bytes[20..];
        if body.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "body has {} bytes, expected {}",
                body.len(),
                total * 8
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut m = AdaptModel::from_head(
            vals[np..np + classes * dim].to_vec(),
            vals[np + classes * dim..].to_vec(),
            dim,
        )?;
        m.hidden = hidden;
        m.params = vals[..np].to_vec();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamOffsets {
    pub b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head() -> AdaptModel {
        AdaptModel::from_head(vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.0], vec![0.1, -0.2], 3).unwrap()
    }

    #[test]
    fn identity_adapter_reproduces_head() {
        let m = head().with_hidden(4, 9);
        let x = [0.3, -0.7, 0.2];
        let a = m.forward(&x);
        assert_eq!(a.features, x.to_vec());
        let direct: Vec<f64> = (0..2)
            .map(|k| m.head_row(k).iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + m.head_b[k])
            .collect();
        assert_eq!(a.logits, direct);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = head().with_hidden(2, 1);
        let mut p = m.params().to_vec();
        p[0] = 0.123456789;
        m.set_params(p).unwrap();
        let back = AdaptModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(AdaptModel::from_bytes(&bytes).is_err());
        bytes = m.to_bytes();
        bytes[4] = 9;
        assert!(matches!(AdaptModel::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
