//! Contrastive clustering with a split representation.
//!
//! Each sample is projected to a pair `(z_c, z_n)`: `K` cluster logits and
//! `C` instance features, each L2-normalized on its own. The training
//! objective is InfoNCE over the concatenated similarity `s = s_c + s_n`
//! plus a swapped cross-entropy that pulls `softmax(z_c / t)` toward a
//! batch-level equipartition assignment computed by Sinkhorn-Knopp.
//!
//! Module map:
//!
//! * [`tensor`]: dense matrices, stable softmax/log-sum-exp, the RNG.
//! * [`autodiff`]: reverse-mode tape and the finite-difference checker.
//! * [`model`]: MLP encoder/head, momentum encoder, negative queue.
//! * [`sinkhorn`]: log-domain equipartition solver.
//! * [`losses`]: InfoNCE in three algebraic forms, negative weights, the
//!   analytic negative gradient, equipartition and self-label losses.
//! * [`data`]: synthetic generators, CSV ingestion, vector augmentations.
//! * [`metrics`]: ACC/NMI/ARI, assignment entropy, similarity statistics.
//! * [`trainer`]: configuration, SGD, the training loop, checkpoints.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod sinkhorn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Library version written into every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
