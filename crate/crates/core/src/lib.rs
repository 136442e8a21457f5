//! Staged convex-to-nonconvex focal loss training for imbalanced binary
//! classification.
//!
//! The pipeline covers CSV ingestion and encoding ([`dataio`]), chi-square
//! association and VIF-based feature pruning ([`stats`]), class rebalancing
//! ([`resample`]), a gated recurrent classifier with exact gradients
//! ([`model`]), the staged focal losses and epoch schedule ([`loss`]),
//! mini-batch training ([`train`]), stratified cross-validated comparison of
//! schedules ([`eval`]), and exact or sampled Shapley attributions
//! ([`explain`]). The `focalstage` binary ties these together; see [`cli`].

pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod explain;
pub mod loss;
pub mod model;
pub mod resample;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
