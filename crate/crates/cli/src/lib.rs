//! Experiment harness for Gaussian-behavior predictive control: config
//! loading, offline identification, receding-horizon closed-loop runs,
//! `λ` sweeps and verification suites.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod tools;
pub mod verify;

pub use config::{ControllerKind, ExperimentConfig, Overrides};
pub use error::{HarnessError, Result};
pub use experiment::{Experiment, RunRecord, SweepRow};
