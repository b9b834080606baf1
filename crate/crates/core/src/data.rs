//! Feature storage, validation and row normalization.
//!
//! A [`FeatureSet`] is immutable once built. All arithmetic is `f64`; the
//! on-disk formats in [`crate::io`] store `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a row has unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    row: i,
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Ground-truth provenance of a synthetic target sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    SourceLike,
    TargetLike,
    Unknown,
}

impl DomainTag {
    pub fn to_byte(self) -> u8 {
        match self {
            DomainTag::SourceLike => 0,
            DomainTag::TargetLike => 1,
            DomainTag::Unknown => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DomainTag::SourceLike),
            1 => Some(DomainTag::TargetLike),
            2 => Some(DomainTag::Unknown),
            _ => None,
        }
    }
}

/// `n` sample embeddings of dimension `d` with optional labels over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Matrix,
    labels: Option<Vec<usize>>,
    classes: usize,
    tags: Option<Vec<DomainTag>>,
}

impl FeatureSet {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>, classes: usize) -> Result<Self> {
        Self::with_tags(features, labels, classes, None)
    }

    pub fn with_tags(
        features: Matrix,
        labels: Option<Vec<usize>>,
        classes: usize,
        tags: Option<Vec<DomainTag>>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::EmptySet);
        }
        if features.cols() == 0 {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: 1,
                found: 0,
            });
        }
        if classes < 2 {
            return Err(Error::InvalidClassCount(classes));
        }
        for (row, r) in features.iter_rows().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEntry { row });
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
            if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
                return Err(Error::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
        }
        if let Some(tags) = &tags {
            if tags.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} domain tags for {n} samples",
                    tags.len()
                )));
            }
        }
        Ok(FeatureSet {
            features,
            labels,
            classes,
            tags,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn tags(&self) -> Option<&[DomainTag]> {
        self.tags.as_deref()
    }

    /// True when every row is unit-norm or exactly zero.
    pub fn is_normalized(&self) -> bool {
        self.first_unnormalized_row().is_none()
    }

    pub(crate) fn first_unnormalized_row(&self) -> Option<(usize, f64)> {
        self.features
            .iter_rows()
            .map(norm)
            .enumerate()
            .find(|&(_, nrm)| nrm != 0.0 && (nrm - 1.0).abs() > UNIT_NORM_TOL)
    }

    /// Replace the feature matrix, keeping labels, tags and class count.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "replacement has {} rows, set has {}",
                features.rows(),
                self.n()
            )));
        }
        Self::with_tags(
            features,
            self.labels.clone(),
            self.classes,
            self.tags.clone(),
        )
    }
}

/// Result of [`normalize_rows`]: the scaled set plus indices of zero rows.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub set: FeatureSet,
    pub degenerate: Vec<usize>,
}

/// Scale every nonzero row to unit L2 norm. Zero rows stay zero and are reported.
pub fn normalize_rows(fs: &FeatureSet) -> Normalized {
    let mut features = fs.features.clone();
    let mut degenerate = Vec::new();
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let nrm = norm(row);
        if nrm == 0.0 {
            degenerate.push(i);
            continue;
        }
        row.iter_mut().for_each(|v| *v /= nrm);
    }
    Normalized {
        set: FeatureSet {
            features,
            labels: fs.labels.clone(),
            classes: fs.classes,
            tags: fs.tags.clone(),
        },
        degenerate,
    }
}

/// Partition of sample indices into queried (labeled) and remaining ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl SplitAssignment {
    /// `labeled` keeps its order; everything else becomes unlabeled in ascending order.
    pub fn new(n: usize, labeled: Vec<usize>) -> Result<Self> {
        if labeled.len() > n {
            return Err(Error::BudgetExceedsSamples {
                m: labeled.len(),
                n,
            });
        }
        let mut seen = vec![false; n];
        for &i in &labeled {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConfig(format!(
                    "sample {i} listed twice in labeled set"
                )));
            }
        }
        let unlabeled = (0..n).filter(|&i| !seen[i]).collect();
        Ok(SplitAssignment { labeled, unlabeled })
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn budget(&self) -> usize {
        self.labeled.len()
    }

    pub fn n(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}
