//! Cross-domain rating prediction for cold-start users.
//!
//! Latent factors are learned in each domain by matrix factorization
//! regularized with a user-similarity graph. For each cold-start user a
//! boosted-tree mapping from auxiliary to target factors is trained on the
//! linked users most similar to them, and target ratings are scored from the
//! mapped factors.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod linalg;
pub mod mapping;
pub mod mfus;
pub mod rng;
pub mod similarity;

pub use config::{ExperimentConfig, Method};
pub use dataset::{DomainPair, RatingMatrix, RatingRecord, SplitSpec};
pub use error::{Error, Result};
pub use gbt::{GbtHyper, GbtModel};
pub use linalg::Matrix;
pub use mapping::{MappingParams, PipelineParams};
pub use mfus::{FactorModel, MfusHyper};
pub use similarity::{SimilarityMatrix, SimilarityParams};
