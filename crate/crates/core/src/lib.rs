//! Simulation and analysis toolkit for biased over-the-air (OTA) federated
//! learning when devices see heterogeneous average path loss.
//!
//! The crate is layered bottom-up:
//!
//! * [`model`]: softmax-regression losses, gradients, datasets and the
//!   constants (smoothness, gradient dissimilarity, gradient bound) the
//!   convergence analysis consumes.
//! * [`wireless`]: deployment geometry, log-distance path loss, Rayleigh
//!   fading and receiver noise.
//! * [`ota`]: truncated channel inversion, post-scaled aggregation and the
//!   analytic aggregation-error variance.
//! * [`design`]: pre-scaler designs (minimum noise variance, zero bias via
//!   Lambert W) and the baseline round policies.
//! * [`bound`]: the bias/variance optimality-error bound.
//! * [`harness`]: experiment configuration, the training loop, stepsize
//!   search, policy comparison and file output.

pub mod bound;
pub mod design;
pub mod error;
pub mod harness;
pub mod model;
pub mod ota;
pub mod rng;
pub mod wireless;

pub use error::{OtaError, Result};
