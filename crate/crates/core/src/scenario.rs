//! Random identification-plus-control instances used by the verification
//! suites and the acceptance tests.

use nalgebra::DVector;
use rand::Rng;

use crate::behavior::PredictiveModel;
use crate::control::{self, ControlProblem, ControlSettings};
use crate::error::Result;
use crate::plant::{self, InitialState, InputPolicy, StochasticLtiModel};
use crate::trajectory::{DataMatrix, WindowMode};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOptions {
    pub n_max: usize,
    pub m_max: usize,
    pub p_max: usize,
    pub l_ini_max: usize,
    pub l_f_min: usize,
    pub l_f_max: usize,
    /// Spectral radius of the random plant.
    pub rho: f64,
    /// Standard deviation of both process and measurement noise.
    pub noise_std: f64,
    /// Column count is drawn as `⌈f·qL⌉` with `f` uniform on this range
    /// (and at least `qL + 1`).
    pub cols_factor: (f64, f64),
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            n_max: 4,
            m_max: 2,
            p_max: 2,
            l_ini_max: 3,
            l_f_min: 1,
            l_f_max: 6,
            rho: 0.8,
            noise_std: 0.1,
            cols_factor: (1.0, 5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: StochasticLtiModel,
    pub data: DataMatrix,
    pub predictor: PredictiveModel,
    pub w_ini: DVector<f64>,
    pub problem: ControlProblem,
}

/// Draws a plant, excites it with white noise to build a Hankel data matrix,
/// records a fresh `w_ini`, and sets up a tracking problem with a random
/// output reference.
pub fn random_instance(rng: &mut impl Rng, opts: &InstanceOptions) -> Result<Instance> {
    let n = rng.random_range(1..=opts.n_max);
    let m = rng.random_range(1..=opts.m_max);
    let p = rng.random_range(1..=opts.p_max);
    let model = plant::random_stable(rng, n, m, p, opts.rho, opts.noise_std, opts.noise_std);
    let l_ini = rng.random_range(1..=opts.l_ini_max);
    let l_f = rng.random_range(opts.l_f_min.max(1)..=opts.l_f_max.max(opts.l_f_min));
    let dims = model.dims();
    let ql = dims.q() * (l_ini + l_f);
    let factor = rng.random_range(opts.cols_factor.0..=opts.cols_factor.1);
    let cols = ((factor * ql as f64).ceil() as usize).max(ql + 1);
    let seed = rng.random::<u64>();
    let input = InputPolicy::WhiteNoise { std: 1.0 };
    let sim = plant::simulate(&model, &InitialState::BurnIn, &input, cols + l_ini + l_f - 1, seed)?;
    let data = DataMatrix::from_trajectory(&sim.trajectory, l_ini, l_f, WindowMode::Hankel)?;
    let predictor = PredictiveModel::estimate(&data, crate::linalg::DEFAULT_RANK_TOL)?;
    let fresh = plant::simulate(&model, &InitialState::BurnIn, &input, l_ini, seed.wrapping_add(1))?;
    let w_ini = fresh.trajectory.window(0, l_ini)?;
    let q_diag: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..2.0)).collect();
    let r_diag: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
    let y_ref = DVector::from_fn(p * l_f, |_, _| rng.random_range(-1.0..1.0));
    let problem = ControlProblem::diagonal(dims, l_ini, l_f, &q_diag, &r_diag)?
        .with_references(DVector::zeros(m * l_f), y_ref)?;
    Ok(Instance {
        model,
        data,
        predictor,
        w_ini,
        problem,
    })
}

impl Instance {
    /// Symmetric input box at `fraction` of the unconstrained SPC input's
    /// largest magnitude, so that at least one bound is active.
    pub fn with_active_input_box(mut self, fraction: f64, s: &ControlSettings) -> Result<Self> {
        let free = control::spc(&self.predictor, &self.w_ini, &self.problem, s)?;
        let b = fraction * free.u_f.amax().max(1e-6);
        let nu = self.problem.n_u();
        self.problem = self
            .problem
            .with_input_box(DVector::from_element(nu, -b), DVector::from_element(nu, b))?;
        Ok(self)
    }
}
