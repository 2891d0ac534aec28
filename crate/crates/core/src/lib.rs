//! Numerical laboratory for the softmax contrastive loss.
//!
//! - [`sphere`]: matrices, unit-sphere algebra, feature batches and the similarity kernel
//! - [`losses`]: contrastive, simple, hard and limiting losses with exact gradients
//! - [`analysis`]: penalty entropy, uniformity, tolerance, local separation, kNN purity
//! - [`synth`]: von Mises–Fisher clusters and the augmentation channel
//! - [`trainer`]: projected SGD on an embedding table and temperature sweeps
//! - [`io`]: binary embedding dumps and CSV/JSON reports
//! - [`checks`]: the randomized limit and gradient suites behind `clab limits-check`
//! - [`cli`]: the `clab` command line

// `!(x >= 0.0)` rejects NaN along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checks;
pub mod cli;
pub mod error;
pub mod io;
pub mod losses;
pub mod sphere;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{LossConfig, Variant};
pub use sphere::{FeatureBatch, Matrix, SimilarityMatrix};

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
