//! Nonlinear state-space identification with recurrent neural networks.
//!
//! Two model structures are provided: a plain state-space neural network
//! (`x(k+1) = W_x σ(W_fx x + W_fu u + b_f) + b_x`, and likewise for the
//! output) and a generalized residual variant that adds a fully connected
//! linear term `[A B; C D]` in parallel to both nonlinear branches.
//!
//! The crate covers the whole identification loop:
//!
//! - [`signal`]: datasets, multisine / sine-sweep excitation, normalization, RMSE.
//! - [`lti`]: linear state-space simulation, subspace + prediction-error
//!   estimation, and unit-variance state scaling.
//! - [`ssnn`]: the two network structures, parameter packing and exact
//!   Jacobians of the simulated output.
//! - [`init`]: random and linear-approximation based initialization schemes.
//! - [`optim`]: simulation-error cost and Levenberg-Marquardt training with a
//!   truncated-SVD step.
//! - [`bench`]: Bouc-Wen and Wiener-Hammerstein simulators and dataset I/O.

pub mod bench;
mod error;
pub mod init;
pub mod lti;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod ssnn;

pub use error::{Error, Result};
