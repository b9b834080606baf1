use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: non-finite entry")]
    NonFiniteEntry { row: usize },

    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("row {row}: unparsable value {value:?}")]
    Parse { row: usize, value: String },

    #[error("feature set is empty")]
    EmptySet,

    #[error("class count must be at least 2, got {0}")]
    InvalidClassCount(usize),

    #[error("neighbor count q={q} outside 1..={max}")]
    NeighborCountOutOfRange { q: usize, max: usize },

    #[error("row {row} is not unit-normalized (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("not a probability vector: {0}")]
    NotAProbability(String),

    #[error("class {class} receives zero probability mass")]
    DegenerateClassMass { class: usize },

    #[error("budget {m} exceeds sample count {n}")]
    BudgetExceedsSamples { m: usize, n: usize },

    #[error("strategy {strategy} requires {input}")]
    MissingInput {
        strategy: &'static str,
        input: &'static str,
    },

    #[error("no label available for sample {index}")]
    MissingLabel { index: usize },

    #[error("no neighbor-purity weight for sample {index}")]
    MissingWeight { index: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "cannot place {classes} class means on the unit sphere in {dim} dimensions \
         with pairwise separation >= {min_separation:.4}"
    )]
    SeparationInfeasible {
        classes: usize,
        dim: usize,
        min_separation: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("label oracle failed: {0}")]
    Oracle(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
