//! Generalization-bound laboratory for noisy sigmoid networks.
//!
//! Trains shifted-sigmoid MLPs with Gaussian noise after every layer, evaluates
//! five closed-form uniform covering-number bounds for them, turns the bounds
//! into NVAC estimates and Dudley-integral generalization bounds, and checks
//! the supporting analytic inequalities numerically.

pub mod bounds;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod genbound;
pub mod mlp;
pub mod norms;
pub mod oracle;

pub use error::{Error, Result};
