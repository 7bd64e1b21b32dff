//! Versioned JSON experiment configuration.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "plant": "default",
//!   "data": { "D": 200, "seed": 7 },
//!   "horizons": { "L_ini": 3, "L_f": 10 },
//!   "control": { "Q": [1.0], "R": [0.1], "y_ref": [1.0], "controller": "spc" },
//!   "run": { "steps": 60, "seed": 11 }
//! }
//! ```
//!
//! `plant` is `"default"`, `{"file": "model.json"}` or `{"inline": {A, B, C, D,
//! Sigma_xi, Sigma_eta}}`. Weights, references and boxes are given for a single
//! time step and repeated over the horizon.

use std::path::{Path, PathBuf};

use gbpc_core::control::Regularizer;
use gbpc_core::plant::ModelJson;
use gbpc_core::qp::QpSettings;
use gbpc_core::trajectory::WindowMode;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub plant: PlantSpec,
    pub data: DataConfig,
    pub horizons: Horizons,
    pub control: ControlConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    /// `δ` added as `δ·I` to the estimated predictive covariance.
    #[serde(default)]
    pub jitter: f64,
}

fn default_rank_tol() -> f64 {
    gbpc_core::linalg::DEFAULT_RANK_TOL
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantSpec {
    #[default]
    Default,
    File(PathBuf),
    Inline(ModelJson),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    #[default]
    Hankel,
    Disjoint,
}

impl From<DataMode> for WindowMode {
    fn from(m: DataMode) -> Self {
        match m {
            DataMode::Hankel => WindowMode::Hankel,
            DataMode::Disjoint => WindowMode::Disjoint,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Length of the excitation run.
    #[serde(rename = "T", default)]
    pub t: Option<usize>,
    /// Number of data-matrix columns; the run length follows from the mode.
    #[serde(rename = "D", default)]
    pub d: Option<usize>,
    /// Identification data from a CSV file instead of a simulation.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub mode: DataMode,
    #[serde(default = "one")]
    pub input_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub subtract_mean: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    #[serde(rename = "L_ini")]
    pub l_ini: usize,
    #[serde(rename = "L_f")]
    pub l_f: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Spc,
    Ce,
    Deepc,
    Optimistic,
    Robust,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Spc => "spc",
            ControllerKind::Ce => "ce",
            ControllerKind::Deepc => "deepc",
            ControllerKind::Optimistic => "optimistic",
            ControllerKind::Robust => "robust",
        }
    }

    /// Whether the controller has a tunable `λ` (or `λ_g`).
    pub fn has_lambda(self) -> bool {
        matches!(
            self,
            ControllerKind::Deepc | ControllerKind::Optimistic | ControllerKind::Robust
        )
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Diagonal of the per-step output weight (length p).
    pub Q: Vec<f64>,
    /// Diagonal of the per-step input weight (length m).
    pub R: Vec<f64>,
    #[serde(default)]
    pub u_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub y_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub u_min: Option<Vec<f64>>,
    #[serde(default)]
    pub u_max: Option<Vec<f64>>,
    #[serde(default)]
    pub y_min: Option<Vec<f64>>,
    #[serde(default)]
    pub y_max: Option<Vec<f64>>,
    pub controller: ControllerKind,
    /// Dual weight of the optimistic and robust controllers.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Robust controller: `λ = lambda_relative · λ_psd`. Takes precedence
    /// over `lambda`.
    #[serde(default)]
    pub lambda_relative: Option<f64>,
    /// DeePC regularization weight.
    #[serde(default)]
    pub lambda_g: Option<f64>,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    /// Ascending values for `sweep`. They stand for `lambda_g` with DeePC,
    /// `lambda` with the optimistic controller, and for the robust controller
    /// `lambda_relative` unless only `lambda` is set.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
}

fn default_regularizer() -> Regularizer {
    Regularizer::Proj2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Input blocks applied per solve.
    #[serde(default = "one_usize")]
    pub apply_steps: usize,
    /// Excitation std during the first `L_ini` steps; defaults to
    /// `data.input_std`.
    #[serde(default)]
    pub warmup_input_std: Option<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn default_steps() -> usize {
    50
}

fn one_usize() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            repetitions: 1,
            seed: 0,
            apply_steps: 1,
            warmup_input_std: None,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
    pub eps_pinf: Option<f64>,
    pub max_iter: Option<usize>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub adaptive_rho: Option<bool>,
    pub polish: Option<bool>,
}

impl SolverConfig {
    pub fn settings(&self) -> QpSettings {
        let mut s = QpSettings::default();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { s.$f = v; })* };
        }
        set!(
            eps_abs,
            eps_rel,
            eps_pinf,
            max_iter,
            rho,
            sigma,
            alpha,
            adaptive_rho,
            polish
        );
        s
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub rank_tol: Option<f64>,
    pub jitter: Option<f64>,
    pub eps_abs: Option<f64>,
    pub controller: Option<ControllerKind>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config; relative plant and data paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let PlantSpec::File(p) = &mut cfg.plant {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.data.file {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.rank_tol {
            self.rank_tol = v;
        }
        if let Some(v) = o.jitter {
            self.jitter = v;
        }
        if let Some(v) = o.eps_abs {
            self.solver.eps_abs = Some(v);
        }
        if let Some(c) = o.controller {
            self.control.controller = c;
        }
    }
}
