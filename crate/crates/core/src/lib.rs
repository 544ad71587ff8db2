//! Spectro-temporal deep speaker embeddings.
//!
//! Utterances are turned into log mel spectrograms, decomposed by SVD into
//! spectral and temporal subspace bases, and fed to a bottleneck classifier
//! whose 25-dimensional bottleneck activations serve as embeddings. Those
//! are smoothed to speaker level and appended to acoustic frames as
//! auxiliary adaptation features.

pub mod config;
pub mod embednet;
pub mod error;
pub mod frontend;
pub mod pipeline;
pub mod smoothing;
pub mod subspace;
pub mod viz;

pub use error::{Error, Result};
