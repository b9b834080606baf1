//! Neighbor-uncertainty active querying and source-free adaptation on
//! pre-extracted feature embeddings.
//!
//! The pipeline: pseudo-label the target set by clustering the source model's
//! predictions ([`cluster`]), build an exact cosine q-NN graph ([`graph`]),
//! score each sample by neighbor ambient uncertainty and pick a diverse
//! one-shot batch ([`query`]), then adapt the model with the neighbor-focal,
//! entropy and class-balance objective ([`loss`], [`train`]).

pub mod cluster;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod loss;
pub mod model;
pub mod query;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
