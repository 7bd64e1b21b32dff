//! Identification, receding-horizon closed loop and `λ` sweeps.

use std::collections::VecDeque;

use gbpc_core::behavior::PredictiveModel;
use gbpc_core::control::{self, repeat_per_step, ControlProblem, ControlResult, ControlSettings};
use gbpc_core::plant::{self, InitialState, InputPolicy, NoiseStreams, StochasticLtiModel};
use gbpc_core::qp::QpStatus;
use gbpc_core::trajectory::{self, DataMatrix, SignalDims, Trajectory};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ControllerKind, DataMode, ExperimentConfig, PlantSpec, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};

/// A validated configuration with its plant and control problem resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: StochasticLtiModel,
    pub problem: ControlProblem,
    pub settings: ControlSettings,
}

/// Frozen offline identification result for one repetition.
#[derive(Debug, Clone)]
pub struct Identified {
    pub data: DataMatrix,
    pub predictor: PredictiveModel,
    /// `λ_psd` when the robust controller is configured.
    pub lambda_psd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Control,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// `w_ini` the applied input was planned from.
    pub w_ini: Option<Vec<f64>>,
    pub stage_cost: f64,
    pub iterations: Option<usize>,
    pub lambda_effective: Option<f64>,
    pub status: Option<QpStatus>,
    /// A fresh solve happened at this step; later steps of the same plan
    /// repeat its `w_ini` and diagnostics.
    pub solved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Abort {
    pub t: usize,
    pub infeasible: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub controller: ControllerKind,
    pub repetition: usize,
    pub parameter: Option<f64>,
    pub dims: SignalDims,
    pub l_ini: usize,
    pub steps: Vec<StepRecord>,
    pub realized_cost: f64,
    pub abort: Option<Abort>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub controller: ControllerKind,
    pub repetition: usize,
    pub parameter: Option<f64>,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub realized_cost: f64,
    pub solves: usize,
    pub non_optimal_solves: usize,
    pub abort: Option<Abort>,
}

impl RunRecord {
    pub fn summary(&self, steps_requested: usize) -> RunSummary {
        let solves: Vec<_> = self
            .steps
            .iter()
            .filter(|s| s.solved)
            .filter_map(|s| s.status)
            .collect();
        RunSummary {
            controller: self.controller,
            repetition: self.repetition,
            parameter: self.parameter,
            steps_requested,
            steps_completed: self.steps.len(),
            realized_cost: self.realized_cost,
            solves: solves.len(),
            non_optimal_solves: solves.iter().filter(|s| **s != QpStatus::Optimal).count(),
            abort: self.abort.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlReport {
    pub controller: ControllerKind,
    pub lambda_effective: f64,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub w_ini: Vec<f64>,
    pub u_f: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_var: Vec<f64>,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(config_err(format!("{name} has {} entries, expected {want}", v.len())));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(config_err(format!("{name} contains NaN")));
    }
    Ok(())
}

fn resolve_plant(spec: &PlantSpec) -> Result<StochasticLtiModel> {
    match spec {
        PlantSpec::Default => Ok(plant::default_benchmark()),
        PlantSpec::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            StochasticLtiModel::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
        }
        PlantSpec::Inline(j) => StochasticLtiModel::try_from(j).map_err(|e| config_err(format!("inline plant: {e}"))),
    }
}

fn box_vec(lo: &Option<Vec<f64>>, hi: &Option<Vec<f64>>, k: usize, l_f: usize) -> (DVector<f64>, DVector<f64>) {
    let side = |v: &Option<Vec<f64>>, fill: f64| match v {
        Some(v) => repeat_per_step(&DVector::from_column_slice(v), l_f),
        None => DVector::from_element(k * l_f, fill),
    };
    (side(lo, f64::NEG_INFINITY), side(hi, f64::INFINITY))
}

impl Experiment {
    /// Resolves the plant and checks every dimension and parameter before
    /// anything is simulated.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let cfg = &config;
        if cfg.schema != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                cfg.schema
            )));
        }
        let model = resolve_plant(&cfg.plant)?;
        let (n, m, p) = (model.n(), model.m(), model.p());
        let dims = model.dims();
        let (l_ini, l_f) = (cfg.horizons.l_ini, cfg.horizons.l_f);
        if l_ini == 0 || l_f == 0 {
            return Err(config_err("horizons L_ini and L_f must be positive"));
        }
        let l = l_ini + l_f;

        let d = &cfg.data;
        match (d.t, d.d, &d.file) {
            (None, None, None) => return Err(config_err("data needs one of T, D or file")),
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) | (_, Some(_), Some(_)) => {
                return Err(config_err("data takes only one of T, D or file"))
            }
            (_, _, Some(path)) if !path.is_file() => {
                return Err(config_err(format!("data file {} does not exist", path.display())))
            }
            _ => {}
        }
        if let Some(t) = d.t {
            if t < l {
                return Err(config_err(format!("T = {t} is shorter than the window length L = {l}")));
            }
        }
        if d.d == Some(0) {
            return Err(config_err("D must be positive"));
        }
        if !(d.input_std >= 0.0 && d.input_std.is_finite()) {
            return Err(config_err("data.input_std must be a non-negative number"));
        }

        let c = &cfg.control;
        check_len("control.Q", &c.Q, p)?;
        check_len("control.R", &c.R, m)?;
        if c.Q.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(config_err("control.Q entries must be finite and non-negative"));
        }
        if c.R.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(config_err("control.R entries must be finite and positive"));
        }
        for (name, v, k) in [
            ("control.u_ref", &c.u_ref, m),
            ("control.y_ref", &c.y_ref, p),
            ("control.u_min", &c.u_min, m),
            ("control.u_max", &c.u_max, m),
            ("control.y_min", &c.y_min, p),
            ("control.y_max", &c.y_max, p),
        ] {
            if let Some(v) = v {
                check_len(name, v, k)?;
            }
        }
        let kind = c.controller;
        let param = Self::configured_parameter(cfg);
        if kind.has_lambda() && param.is_none() && c.lambda_grid.is_none() {
            let which = if kind == ControllerKind::Deepc {
                "lambda_g"
            } else {
                "lambda"
            };
            return Err(config_err(format!("controller {} needs {which}", kind.name())));
        }
        if let Some(v) = param {
            if !(v >= 0.0 && v.is_finite()) || (v == 0.0 && kind != ControllerKind::Deepc) {
                return Err(config_err(format!("invalid λ parameter {v} for {}", kind.name())));
            }
        }
        // the grid is only read by `sweep`, which rejects controllers without λ
        if let (Some(grid), true) = (&c.lambda_grid, kind.has_lambda()) {
            validate_grid(grid, kind)?;
        }
        let has_y_box = c.y_min.is_some() || c.y_max.is_some();
        if kind == ControllerKind::Robust && has_y_box {
            return Err(config_err(
                "output constraints are not supported by the robust controller",
            ));
        }

        let r = &cfg.run;
        if r.steps == 0 || r.repetitions == 0 {
            return Err(config_err("run.steps and run.repetitions must be positive"));
        }
        if r.apply_steps == 0 || r.apply_steps > l_f {
            return Err(config_err(format!("run.apply_steps must lie in 1..={l_f}")));
        }
        if let Some(x0) = &r.x0 {
            check_len("run.x0", x0, n)?;
        }
        if let Some(s) = r.warmup_input_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(config_err("run.warmup_input_std must be a non-negative number"));
            }
        }
        if !(cfg.rank_tol > 0.0 && cfg.rank_tol < 1.0) {
            return Err(config_err("rank_tol must lie in (0, 1)"));
        }
        if !(cfg.jitter >= 0.0 && cfg.jitter.is_finite()) {
            return Err(config_err("jitter must be a non-negative number"));
        }

        let zeros = |k: usize| vec![0.0; k];
        let u_ref = repeat_per_step(&DVector::from_vec(c.u_ref.clone().unwrap_or_else(|| zeros(m))), l_f);
        let y_ref = repeat_per_step(&DVector::from_vec(c.y_ref.clone().unwrap_or_else(|| zeros(p))), l_f);
        let (u_lo, u_hi) = box_vec(&c.u_min, &c.u_max, m, l_f);
        let mut problem = ControlProblem::diagonal(dims, l_ini, l_f, &c.Q, &c.R)
            .and_then(|cp| cp.with_references(u_ref, y_ref))
            .and_then(|cp| cp.with_input_box(u_lo, u_hi))
            .map_err(|e| config_err(format!("control problem: {e}")))?;
        if has_y_box {
            let (lo, hi) = box_vec(&c.y_min, &c.y_max, p, l_f);
            problem = problem
                .with_output_box(lo, hi)
                .map_err(|e| config_err(format!("control problem: {e}")))?;
        }
        let settings = ControlSettings {
            qp: cfg.solver.settings(),
            rank_tol: cfg.rank_tol,
        };
        Ok(Self {
            config,
            model,
            problem,
            settings,
        })
    }

    fn configured_parameter(cfg: &ExperimentConfig) -> Option<f64> {
        let c = &cfg.control;
        match c.controller {
            ControllerKind::Spc | ControllerKind::Ce => None,
            ControllerKind::Deepc => c.lambda_g,
            ControllerKind::Optimistic => c.lambda,
            ControllerKind::Robust => c.lambda_relative.or(c.lambda),
        }
    }

    /// `λ_g`, `λ` or the relative robust multiplier, as configured.
    pub fn parameter(&self) -> Option<f64> {
        Self::configured_parameter(&self.config)
    }

    /// The configured parameter, or a config error if the controller needs
    /// one and only a grid was given.
    pub fn require_parameter(&self) -> Result<Option<f64>> {
        let kind = self.config.control.controller;
        match self.parameter() {
            None if kind.has_lambda() => {
                let which = if kind == ControllerKind::Deepc {
                    "lambda_g"
                } else {
                    "lambda"
                };
                Err(config_err(format!("controller {} needs {which}", kind.name())))
            }
            p => Ok(p),
        }
    }

    pub fn dims(&self) -> SignalDims {
        self.model.dims()
    }

    /// Run length of the excitation experiment.
    pub fn data_length(&self) -> usize {
        let d = &self.config.data;
        let l = self.config.horizons.l_ini + self.config.horizons.l_f;
        match (d.t, d.d) {
            (Some(t), _) => t,
            (None, Some(cols)) => match d.mode {
                DataMode::Hankel => cols + l - 1,
                DataMode::Disjoint => cols * l,
            },
            (None, None) => 0,
        }
    }

    /// Identification trajectory for repetition `rep`: the configured file,
    /// or a seeded white-noise excitation run from a burnt-in state.
    pub fn identification_data(&self, rep: usize) -> Result<Trajectory> {
        let d = &self.config.data;
        if let Some(path) = &d.file {
            return trajectory::load_csv(path, self.dims()).map_err(|e| HarnessError::io(path, e));
        }
        let sim = plant::simulate(
            &self.model,
            &InitialState::BurnIn,
            &InputPolicy::WhiteNoise { std: d.input_std },
            self.data_length(),
            d.seed.wrapping_add(rep as u64),
        )?;
        Ok(sim.trajectory)
    }

    pub fn data_matrix(&self, traj: &Trajectory) -> Result<DataMatrix> {
        let h = self.config.horizons;
        Ok(DataMatrix::from_trajectory(
            traj,
            h.l_ini,
            h.l_f,
            self.config.data.mode.into(),
        )?)
    }

    pub fn identify(&self, rep: usize) -> Result<Identified> {
        let data = self.data_matrix(&self.identification_data(rep)?)?;
        let ql = self.dims().q() * data.l();
        if data.cols() < ql {
            log::warn!("only {} data columns for a window of dimension {ql}", data.cols());
        }
        let mut predictor = PredictiveModel::estimate(&data, self.config.rank_tol)?;
        if self.config.jitter > 0.0 {
            let k = predictor.cov.nrows();
            predictor.cov += DMatrix::identity(k, k) * self.config.jitter;
        }
        let lambda_psd = if self.config.control.controller == ControllerKind::Robust {
            Some(control::lambda_threshold(&predictor, &self.problem)?.lambda_psd)
        } else {
            None
        };
        Ok(Identified {
            data,
            predictor,
            lambda_psd,
        })
    }

    /// `λ` passed to the controller for a configured parameter value.
    pub fn effective_lambda(&self, id: &Identified, param: f64) -> f64 {
        let c = &self.config.control;
        if c.controller == ControllerKind::Robust && (c.lambda_relative.is_some() || c.lambda.is_none()) {
            param * id.lambda_psd.unwrap_or(f64::NAN)
        } else {
            param
        }
    }

    pub fn solve(&self, id: &Identified, w_ini: &DVector<f64>, param: Option<f64>) -> gbpc_core::Result<ControlResult> {
        let (pm, cp, s) = (&id.predictor, &self.problem, &self.settings);
        let need = || param.ok_or_else(|| gbpc_core::Error::Unsupported("controller parameter is not set".into()));
        match self.config.control.controller {
            ControllerKind::Spc => control::spc(pm, w_ini, cp, s),
            ControllerKind::Ce => control::certainty_equivalence(pm, w_ini, cp, s),
            ControllerKind::Deepc => control::deepc(&id.data, w_ini, cp, self.config.control.regularizer, need()?, s),
            ControllerKind::Optimistic => control::optimistic(pm, w_ini, cp, need()?, s),
            ControllerKind::Robust => control::robust(pm, w_ini, cp, self.effective_lambda(id, need()?), s),
        }
    }

    fn stage_cost(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let (m, p) = (self.model.m(), self.model.p());
        let c = &self.config.control;
        let (du, dy) = (u - self.problem.u_ref.rows(0, m), y - self.problem.y_ref.rows(0, p));
        let ru: f64 = (0..m).map(|i| c.R[i] * du[i] * du[i]).sum();
        let qy: f64 = (0..p).map(|i| c.Q[i] * dy[i] * dy[i]).sum();
        ru + qy
    }

    pub fn run_closed_loop(&self, id: &Identified, rep: usize, param: Option<f64>) -> Result<RunRecord> {
        self.run_closed_loop_for(id, rep, param, self.config.run.steps)
    }

    /// Receding-horizon loop from `x0`. The first `L_ini` steps apply the
    /// warm-up excitation; afterwards `w_ini` is built from the last `L_ini`
    /// measured pairs and the first `apply_steps` planned blocks are applied.
    /// A failed solve ends the run with a partial record.
    pub fn run_closed_loop_for(
        &self,
        id: &Identified,
        rep: usize,
        param: Option<f64>,
        steps: usize,
    ) -> Result<RunRecord> {
        let run = &self.config.run;
        let (n, m) = (self.model.n(), self.model.m());
        let l_ini = self.config.horizons.l_ini;
        let warm_std = run.warmup_input_std.unwrap_or(self.config.data.input_std);
        let mut noise = NoiseStreams::new(&self.model, run.seed.wrapping_add(rep as u64))?;
        let mut x = run
            .x0
            .as_ref()
            .map(|v| DVector::from_column_slice(v))
            .unwrap_or_else(|| DVector::zeros(n));
        let mut history: VecDeque<DVector<f64>> = VecDeque::with_capacity(l_ini + 1);
        let mut queue: VecDeque<DVector<f64>> = VecDeque::new();
        let mut plan: Option<(Vec<f64>, usize, f64, QpStatus)> = None;
        let mut record = RunRecord {
            controller: self.config.control.controller,
            repetition: rep,
            parameter: param,
            dims: self.dims(),
            l_ini,
            steps: Vec::with_capacity(steps),
            realized_cost: 0.0,
            abort: None,
        };
        for t in 0..steps {
            let phase = if t < l_ini { Phase::Warmup } else { Phase::Control };
            let solved = phase == Phase::Control && queue.is_empty();
            let u = match phase {
                Phase::Warmup => noise.input(m, warm_std),
                Phase::Control => {
                    if queue.is_empty() {
                        let w_ini = DVector::from_iterator(
                            history.iter().map(|w| w.len()).sum(),
                            history.iter().flat_map(|w| w.iter().copied()),
                        );
                        match self.solve(id, &w_ini, param) {
                            Ok(res) => {
                                for k in 0..run.apply_steps {
                                    queue.push_back(res.u_f.rows(k * m, m).into_owned());
                                }
                                plan = Some((
                                    w_ini.iter().copied().collect(),
                                    res.solver.iterations,
                                    res.lambda_effective,
                                    res.solver.status,
                                ));
                            }
                            Err(e) => {
                                log::warn!("step {t}: controller failed: {e}");
                                record.abort = Some(Abort {
                                    t,
                                    infeasible: e == gbpc_core::Error::Infeasible,
                                    message: e.to_string(),
                                });
                                break;
                            }
                        }
                    }
                    queue.pop_front().expect("plan queued")
                }
            };
            let xi = noise.process();
            let eta = noise.measurement();
            let (x_next, y) = plant::step(&self.model, &x, &u, &xi, &eta);
            let stage_cost = self.stage_cost(&u, &y);
            let info = if phase == Phase::Control { plan.as_ref() } else { None };
            record.steps.push(StepRecord {
                t,
                phase,
                u: u.iter().copied().collect(),
                y: y.iter().copied().collect(),
                w_ini: info.map(|p| p.0.clone()),
                stage_cost,
                iterations: info.map(|p| p.1),
                lambda_effective: info.map(|p| p.2),
                status: info.map(|p| p.3),
                solved,
            });
            record.realized_cost += stage_cost;
            history.push_back(DVector::from_iterator(
                u.len() + y.len(),
                u.iter().chain(y.iter()).copied(),
            ));
            if history.len() > l_ini {
                history.pop_front();
            }
            x = x_next;
        }
        Ok(record)
    }

    /// One solve from the closed-loop warm-up `w_ini` (or the given one).
    pub fn control_once(&self, w_ini: Option<DVector<f64>>) -> Result<ControlReport> {
        let param = self.require_parameter()?;
        let id = self.identify(0)?;
        let w_ini = match w_ini {
            Some(w) => w,
            None => {
                let l_ini = self.config.horizons.l_ini;
                let warm = self.run_closed_loop_for(&id, 0, param, l_ini)?;
                let q = self.dims().q();
                DVector::from_iterator(
                    q * l_ini,
                    warm.steps.iter().flat_map(|s| s.u.iter().chain(s.y.iter()).copied()),
                )
            }
        };
        let res = self.solve(&id, &w_ini, param)?;
        Ok(ControlReport {
            controller: self.config.control.controller,
            lambda_effective: res.lambda_effective,
            objective: res.objective,
            status: res.solver.status,
            iterations: res.solver.iterations,
            w_ini: w_ini.iter().copied().collect(),
            u_f: res.u_f.iter().copied().collect(),
            y_mean: res.y_pred.mean.iter().copied().collect(),
            y_var: res.y_pred.cov.diagonal().iter().copied().collect(),
        })
    }

    /// Identification per repetition, shared by every grid cell.
    pub fn identify_all(&self) -> Vec<std::result::Result<Identified, String>> {
        (0..self.config.run.repetitions)
            .into_par_iter()
            .map(|r| self.identify(r).map_err(|e| e.to_string()))
            .collect()
    }

    /// Realized cost of every repetition at one parameter value; failed runs
    /// are `None`.
    pub fn monte_carlo(
        &self,
        idents: &[std::result::Result<Identified, String>],
        param: Option<f64>,
    ) -> Vec<Option<f64>> {
        idents
            .par_iter()
            .enumerate()
            .map(|(rep, id)| {
                let id = id.as_ref().ok()?;
                let rec = self.run_closed_loop(id, rep, param).ok()?;
                rec.abort.is_none().then_some(rec.realized_cost)
            })
            .collect()
    }

    /// Mean and standard deviation of the realized cost over the configured
    /// repetitions for each grid value. Common random numbers are used across
    /// the grid.
    pub fn sweep(&self, grid: &[f64]) -> Result<Vec<SweepRow>> {
        validate_grid(grid, self.config.control.controller)?;
        let idents = self.identify_all();
        for (rep, id) in idents.iter().enumerate() {
            if let Err(e) = id {
                log::warn!("repetition {rep}: identification failed: {e}");
            }
        }
        let cells: Vec<(usize, usize)> = (0..grid.len())
            .flat_map(|i| (0..idents.len()).map(move |r| (i, r)))
            .collect();
        let costs: Vec<Option<f64>> = cells
            .par_iter()
            .map(|&(i, rep)| {
                let id = idents[rep].as_ref().ok()?;
                match self.run_closed_loop(id, rep, Some(grid[i])) {
                    Ok(rec) if rec.abort.is_none() => Some(rec.realized_cost),
                    Ok(rec) => {
                        log::warn!(
                            "λ = {}, repetition {rep}: {}",
                            grid[i],
                            rec.abort.map(|a| a.message).unwrap_or_default()
                        );
                        None
                    }
                    Err(e) => {
                        log::warn!("λ = {}, repetition {rep}: {e}", grid[i]);
                        None
                    }
                }
            })
            .collect();
        let reps = idents.len();
        Ok(grid
            .iter()
            .enumerate()
            .map(|(i, &lambda)| {
                let done: Vec<f64> = costs[i * reps..(i + 1) * reps].iter().flatten().copied().collect();
                let (mean, std) = mean_std(&done);
                SweepRow {
                    lambda,
                    mean,
                    std,
                    completed: done.len(),
                    failed: reps - done.len(),
                }
            })
            .collect())
    }
}

pub fn validate_grid(grid: &[f64], kind: ControllerKind) -> Result<()> {
    if !kind.has_lambda() {
        return Err(config_err(format!("controller {} has no λ to sweep", kind.name())));
    }
    if grid.is_empty() {
        return Err(config_err("λ grid is empty"));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(config_err("λ grid values must be finite and non-negative"));
    }
    if kind != ControllerKind::Deepc && grid.contains(&0.0) {
        return Err(config_err(format!("λ = 0 is not valid for {}", kind.name())));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(config_err("λ grid must be sorted ascending"));
    }
    Ok(())
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{"schema": 1, "data": {{"D": 60, "seed": 4}}, "horizons": {{"L_ini": 2, "L_f": 4}},
               "control": {{"Q": [1.0], "R": [0.2], {extra}}}, "run": {{"steps": 10}}}}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[0.0, 1.0, 1.0, 5.0], ControllerKind::Deepc).is_ok());
        assert!(validate_grid(&[0.0, 1.0], ControllerKind::Optimistic).is_err());
        assert!(validate_grid(&[2.0, 1.0], ControllerKind::Robust).is_err());
        assert!(validate_grid(&[1.0, f64::INFINITY], ControllerKind::Robust).is_err());
        assert!(validate_grid(&[], ControllerKind::Deepc).is_err());
        assert!(validate_grid(&[1.0], ControllerKind::Spc).is_err());
    }

    #[test]
    fn mean_std_uses_sample_std() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[3.0]), (Some(3.0), Some(0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - (5.0_f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn data_length_follows_mode() {
        let exp = Experiment::from_config(config(r#""controller": "spc""#)).unwrap();
        assert_eq!(exp.data_length(), 60 + 6 - 1);
        let mut cfg = config(r#""controller": "spc""#);
        cfg.data.mode = DataMode::Disjoint;
        let exp = Experiment::from_config(cfg).unwrap();
        assert_eq!(exp.data_length(), 360);
        let traj = exp.identification_data(0).unwrap();
        assert_eq!(exp.data_matrix(&traj).unwrap().cols(), 60);
    }

    #[test]
    fn parameter_follows_controller() {
        let c = r#""controller": "robust", "lambda": 0.3, "lambda_g": 7.0, "lambda_relative": 2.0"#;
        let mut cfg = config(c);
        let robust = Experiment::from_config(cfg.clone()).unwrap();
        assert_eq!(robust.parameter(), Some(2.0));
        cfg.control.controller = ControllerKind::Deepc;
        assert_eq!(Experiment::from_config(cfg.clone()).unwrap().parameter(), Some(7.0));
        cfg.control.controller = ControllerKind::Optimistic;
        assert_eq!(Experiment::from_config(cfg.clone()).unwrap().parameter(), Some(0.3));
        cfg.control.controller = ControllerKind::Ce;
        assert_eq!(Experiment::from_config(cfg).unwrap().parameter(), None);

        let id = robust.identify(0).unwrap();
        let psd = id.lambda_psd.unwrap();
        assert!(psd > 0.0);
        assert_eq!(robust.effective_lambda(&id, 2.0), 2.0 * psd);

        let absolute = Experiment::from_config(config(r#""controller": "robust", "lambda": 5.0"#)).unwrap();
        let id = absolute.identify(0).unwrap();
        assert_eq!(absolute.effective_lambda(&id, 5.0), 5.0);
    }

    #[test]
    fn grid_only_config_needs_explicit_parameter_for_single_runs() {
        let exp = Experiment::from_config(config(r#""controller": "optimistic", "lambda_grid": [1.0, 2.0]"#)).unwrap();
        assert_eq!(exp.parameter(), None);
        assert!(exp.require_parameter().is_err());
        assert_eq!(exp.sweep(&[1.0]).unwrap().len(), 1);
    }

    #[test]
    fn identification_is_seeded_per_repetition() {
        let exp = Experiment::from_config(config(r#""controller": "spc""#)).unwrap();
        let a = exp.identification_data(0).unwrap();
        assert_eq!(a, exp.identification_data(0).unwrap());
        assert_ne!(a, exp.identification_data(1).unwrap());
    }

    #[test]
    fn jitter_is_added_to_the_predictive_covariance() {
        let mut cfg = config(r#""controller": "spc""#);
        let plain = Experiment::from_config(cfg.clone()).unwrap().identify(0).unwrap();
        cfg.jitter = 1e-3;
        let jittered = Experiment::from_config(cfg).unwrap().identify(0).unwrap();
        let diff = &jittered.predictor.cov - &plain.predictor.cov;
        assert!((diff - DMatrix::identity(4, 4) * 1e-3).amax() < 1e-15);
    }
}
