//! Unsupervised graph domain adaptation with an asymmetric propagation
//! encoder: the source branch is an MLP, the target branch propagates `k`
//! times, and both share one transformation. Alignment is MMD or adversarial.

pub mod alignment;
pub mod cli;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod trainer;
pub mod transition;

pub use error::{Error, Result};
