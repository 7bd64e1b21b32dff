//! Gaussian-behavior modeling of stochastic LTI systems and the data-driven
//! predictive controllers built on it.
//!
//! Finite windows of a trajectory are modeled as draws from a multivariate
//! Gaussian. Estimating that Gaussian from data and conditioning it on the
//! past and the planned input yields a predictive distribution for future
//! outputs, which the controllers in [`control`] optimize against.

pub mod behavior;
pub mod control;
pub mod error;
pub mod linalg;
pub mod plant;
pub mod qp;
pub mod scenario;
pub mod trajectory;

pub use error::{Error, Result};
