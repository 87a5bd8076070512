//! Core library for semantic-enhanced open-set domain generalization.
//!
//! The pipeline: multi-domain datasets with held-out unknown classes, a
//! pluggable embedding backend (deterministic synthetic path plus an
//! external adapter contract), K-head attention pooling of patch features
//! into semantic tokens, enhanced prompt assembly for known classes and a
//! learnable unknown prompt, duplex contrastive losses, perturbation-based
//! pseudo-unknown generation, an alternating-phase trainer, and a
//! leave-one-domain-out evaluation harness.

pub mod archive;
pub mod autodiff;
pub mod backend;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod num;
pub mod prompt;
pub mod pseudo;
pub mod seeds;
pub mod semantic;
pub mod train;

pub use error::{Error, ErrorClass, Result};
