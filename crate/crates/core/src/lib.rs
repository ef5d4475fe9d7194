//! Bregman hybrid primal-dual solvers for discrete optimal transport (OT) and
//! Wasserstein barycenter (WB) problems.
//!
//! The crate is organized bottom-up:
//!
//! - [`instances`]: histograms, cost matrices, problem instances, generators and file IO.
//! - [`kernels`]: entropy and scaled-entropy Bregman kernels and their prox operators.
//! - [`hpd`]: the generic hybrid primal-dual engine with linesearch and ergodic averaging.
//! - [`ot`]: the OT saddle-point adapter, rounding, gap certificates and ε-drivers.
//! - [`wb`]: the barycenter adapter with the closure constraint on the last dual block.
//! - [`penalized`]: unbalanced OT/WB with quadratic or total-variation marginal penalties.
//! - [`agd`]: accelerated gradient ascent on the scaled-entropy smoothed dual (baseline).
//! - [`oracle`]: exact small-scale solvers used to validate everything above.
//!
//! Element-wise passes over n×n matrices run on rayon when the `parallel` feature is
//! enabled (the default). Reductions use a fixed chunking so results are bit-identical
//! between the sequential and parallel paths; see [`par`].

pub mod agd;
pub mod error;
pub mod hpd;
pub mod instances;
pub mod kernels;
pub mod matrix;
pub mod oracle;
pub mod ot;
pub mod par;
pub mod penalized;
pub mod wb;

pub use error::{Error, Result};
pub use matrix::Matrix;
