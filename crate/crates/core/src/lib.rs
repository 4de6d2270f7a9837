//! Few-shot class-incremental classification over embedding vectors with a
//! stochastic cosine classifier.
//!
//! Embeddings enter through [`data`] (FCAE archives or the synthetic
//! generator), are trained and evaluated by [`session`], and summarized by
//! [`metrics`].

pub mod classifier;
pub mod data;
pub mod episode;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod numeric;
pub mod session;

pub use error::{Error, ErrorKind, FormatError, Result};

/// Integer class label.
pub type ClassId = u32;
