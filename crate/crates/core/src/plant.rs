//! Stochastic LTI state-space plant
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + ξ_t,   ξ_t ~ N(0, Σ^ξ)
//! y_t     = C x_t + D u_t + η_t,   η_t ~ N(0, Σ^η)
//! ```
//!
//! together with the stacked block operators mapping a length-`L` window of
//! states, inputs and noise to outputs, `y = O_L x_t + T_u u + T_ξ ξ + η`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::trajectory::{SignalDims, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticLtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub sigma_xi: DMatrix<f64>,
    pub sigma_eta: DMatrix<f64>,
}

fn shape_err(name: &str, got: (usize, usize), want: (usize, usize)) -> Error {
    Error::Shape(format!("{name} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
}

impl StochasticLtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        sigma_xi: DMatrix<f64>,
        sigma_eta: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let checks = [
            ("A", a.shape(), (n, n)),
            ("B", b.shape(), (n, m)),
            ("C", c.shape(), (p, n)),
            ("D", d.shape(), (p, m)),
            ("Sigma_xi", sigma_xi.shape(), (n, n)),
            ("Sigma_eta", sigma_eta.shape(), (p, p)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape_err(name, got, want));
            }
        }
        if m == 0 || p == 0 {
            return Err(Error::Shape("plant needs at least one input and one output".into()));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            linalg::check_finite(mat, name)?;
        }
        for (name, cov) in [("Sigma_xi", &sigma_xi), ("Sigma_eta", &sigma_eta)] {
            if !linalg::is_psd(cov, 1e-10) {
                return Err(Error::InvalidMatrix(format!("{name} is not positive semidefinite")));
            }
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            sigma_xi: linalg::symmetrize(&sigma_xi),
            sigma_eta: linalg::symmetrize(&sigma_eta),
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn dims(&self) -> SignalDims {
        SignalDims {
            m: self.m(),
            p: self.p(),
        }
    }

    /// Same dynamics with both noise covariances replaced.
    pub fn with_noise(&self, sigma_xi: DMatrix<f64>, sigma_eta: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            sigma_xi,
            sigma_eta,
        )
    }

    pub fn noiseless(&self) -> Self {
        Self {
            sigma_xi: DMatrix::zeros(self.n(), self.n()),
            sigma_eta: DMatrix::zeros(self.p(), self.p()),
            ..self.clone()
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// Steady-state gain `C (I − A)⁻¹ B + D`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let lhs = DMatrix::<f64>::identity(n, n) - &self.a;
        let x = lhs
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::InvalidMatrix("I − A is singular".into()))?;
        Ok(&self.c * x + &self.d)
    }

    /// Stationary state covariance under white inputs of covariance `sigma_u`.
    pub fn stationary_state_cov(&self, sigma_u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let qc = &self.b * sigma_u * self.b.transpose() + &self.sigma_xi;
        linalg::lyap_discrete(&self.a, &qc)
    }
}

/// JSON form `{A, B, C, D, Sigma_xi, Sigma_eta}` with row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ModelJson {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub C: Vec<Vec<f64>>,
    pub D: Vec<Vec<f64>>,
    pub Sigma_xi: Vec<Vec<f64>>,
    pub Sigma_eta: Vec<Vec<f64>>,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parses a row-major nested array; `cols_hint` sizes empty matrices.
pub fn rows_to_matrix(rows: &[Vec<f64>], cols_hint: usize, name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(cols_hint, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Shape(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl From<&StochasticLtiModel> for ModelJson {
    fn from(m: &StochasticLtiModel) -> Self {
        ModelJson {
            A: matrix_to_rows(&m.a),
            B: matrix_to_rows(&m.b),
            C: matrix_to_rows(&m.c),
            D: matrix_to_rows(&m.d),
            Sigma_xi: matrix_to_rows(&m.sigma_xi),
            Sigma_eta: matrix_to_rows(&m.sigma_eta),
        }
    }
}

impl TryFrom<&ModelJson> for StochasticLtiModel {
    type Error = Error;
    fn try_from(j: &ModelJson) -> Result<Self> {
        let a = rows_to_matrix(&j.A, 0, "A")?;
        let n = a.nrows();
        let b = rows_to_matrix(&j.B, 0, "B")?;
        let c = rows_to_matrix(&j.C, n, "C")?;
        let d = rows_to_matrix(&j.D, b.ncols(), "D")?;
        let sxi = rows_to_matrix(&j.Sigma_xi, n, "Sigma_xi")?;
        let seta = rows_to_matrix(&j.Sigma_eta, c.nrows(), "Sigma_eta")?;
        StochasticLtiModel::new(a, b, c, d, sxi, seta)
    }
}

impl StochasticLtiModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::try_from(&j)
    }
}

/// Stacked operators of a length-`L` window.
#[derive(Debug, Clone)]
pub struct BlockOperators {
    /// `[C; CA; …; CA^{L−1}]`, `pL × n`.
    pub obs: DMatrix<f64>,
    /// Input Toeplitz, `pL × mL`, lower block triangular with `D` on the diagonal.
    pub t_u: DMatrix<f64>,
    /// Process-noise Toeplitz, `pL × nL` (`t_u` with `B = I`, `D = 0`).
    pub t_xi: DMatrix<f64>,
}

fn toeplitz(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let p = c.nrows();
    let m = b.ncols();
    // markov[k] = C A^{k-1} B for k >= 1, markov[0] = D
    let mut markov = Vec::with_capacity(l);
    markov.push(d.clone());
    let mut cak = c.clone();
    for _ in 1..l {
        markov.push(&cak * b);
        cak = &cak * a;
    }
    let mut t = DMatrix::zeros(p * l, m * l);
    for i in 0..l {
        for j in 0..=i {
            t.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
        }
    }
    t
}

pub fn build_block_operators(model: &StochasticLtiModel, l: usize) -> Result<BlockOperators> {
    if l == 0 {
        return Err(Error::Shape("window length must be positive".into()));
    }
    let (n, p) = (model.n(), model.p());
    let mut obs = DMatrix::zeros(p * l, n);
    let mut cak = model.c.clone();
    for i in 0..l {
        obs.view_mut((i * p, 0), (p, n)).copy_from(&cak);
        cak = &cak * &model.a;
    }
    let t_u = toeplitz(&model.a, &model.b, &model.c, &model.d, l);
    let t_xi = toeplitz(&model.a, &DMatrix::identity(n, n), &model.c, &DMatrix::zeros(p, n), l);
    Ok(BlockOperators { obs, t_u, t_xi })
}

/// One exact update; returns `(x_{t+1}, y_t)`.
pub fn step(
    model: &StochasticLtiModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    eta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let x_next = &model.a * x + &model.b * u + xi;
    let y = &model.c * x + &model.d * u + eta;
    (x_next, y)
}

/// Independent seeded Gaussian streams, one per noise source.
///
/// Streams are derived from a single seed so that each source can be replayed
/// on its own.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    xi: ChaCha8Rng,
    eta: ChaCha8Rng,
    input: ChaCha8Rng,
    init: ChaCha8Rng,
    xi_factor: DMatrix<f64>,
    eta_factor: DMatrix<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn standard_normal_vec(rng: &mut impl Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

impl NoiseStreams {
    pub fn new(model: &StochasticLtiModel, seed: u64) -> Result<Self> {
        Ok(Self {
            xi: stream(seed, 1),
            eta: stream(seed, 2),
            input: stream(seed, 3),
            init: stream(seed, 4),
            xi_factor: linalg::psd_factor(&model.sigma_xi)?,
            eta_factor: linalg::psd_factor(&model.sigma_eta)?,
        })
    }

    pub fn process(&mut self) -> DVector<f64> {
        let z = standard_normal_vec(&mut self.xi, self.xi_factor.ncols());
        &self.xi_factor * z
    }

    pub fn measurement(&mut self) -> DVector<f64> {
        let z = standard_normal_vec(&mut self.eta, self.eta_factor.ncols());
        &self.eta_factor * z
    }

    /// White input `N(0, std²·I)`.
    pub fn input(&mut self, m: usize, std: f64) -> DVector<f64> {
        standard_normal_vec(&mut self.input, m) * std
    }

    pub fn initial_state(&mut self, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
        let z = standard_normal_vec(&mut self.init, factor.ncols());
        mean + factor * z
    }
}

#[derive(Debug, Clone)]
pub enum InitialState {
    Fixed(DVector<f64>),
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    /// Zero-mean stationary distribution under the chosen input policy.
    Stationary,
    /// Start at zero and discard the first `10·n` samples.
    BurnIn,
}

#[derive(Debug, Clone)]
pub enum InputPolicy {
    /// Explicit `T × m` input sequence.
    Sequence(DMatrix<f64>),
    /// I.i.d. `N(0, std²·I)` excitation.
    WhiteNoise { std: f64 },
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    /// States `x_0 … x_T` aligned with the returned trajectory.
    pub states: Vec<DVector<f64>>,
}

/// Seeded, reproducible rollout of length `t_len`.
pub fn simulate(
    model: &StochasticLtiModel,
    x0: &InitialState,
    inputs: &InputPolicy,
    t_len: usize,
    seed: u64,
) -> Result<Simulation> {
    let (n, m, p) = (model.n(), model.m(), model.p());
    if t_len == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let rho = model.spectral_radius();
    if rho >= 1.0 {
        log::warn!("simulating a plant with spectral radius {rho:.4} >= 1");
    }
    if let InputPolicy::Sequence(seq) = inputs {
        if seq.ncols() != m || seq.nrows() < t_len {
            return Err(Error::Shape(format!(
                "input sequence is {}x{}, need at least {t_len}x{m}",
                seq.nrows(),
                seq.ncols()
            )));
        }
    }
    let mut noise = NoiseStreams::new(model, seed)?;
    let burn_in = match x0 {
        InitialState::BurnIn => 10 * n,
        _ => 0,
    };
    let mut x = match x0 {
        InitialState::Fixed(x) => {
            if x.len() != n {
                return Err(Error::Shape(format!(
                    "initial state has length {}, expected {n}",
                    x.len()
                )));
            }
            x.clone()
        }
        InitialState::Gaussian { mean, cov } => {
            let factor = linalg::psd_factor(cov)?;
            noise.initial_state(mean, &factor)
        }
        InitialState::Stationary => {
            let sigma_u = match inputs {
                InputPolicy::WhiteNoise { std } => DMatrix::identity(m, m) * (std * std),
                InputPolicy::Sequence(_) => DMatrix::zeros(m, m),
            };
            let cov = model.stationary_state_cov(&sigma_u)?;
            let factor = linalg::psd_factor(&cov)?;
            noise.initial_state(&DVector::zeros(n), &factor)
        }
        InitialState::BurnIn => DVector::zeros(n),
    };

    let mut samples = DMatrix::zeros(t_len, m + p);
    let mut states = Vec::with_capacity(t_len + 1);
    for k in 0..burn_in + t_len {
        let u = match inputs {
            InputPolicy::WhiteNoise { std } => noise.input(m, *std),
            InputPolicy::Sequence(seq) if k >= burn_in => seq.row(k - burn_in).transpose(),
            InputPolicy::Sequence(_) => DVector::zeros(m),
        };
        let xi = noise.process();
        let eta = noise.measurement();
        if k >= burn_in {
            states.push(x.clone());
        }
        let (x_next, y) = step(model, &x, &u, &xi, &eta);
        if k >= burn_in {
            let t = k - burn_in;
            samples.view_mut((t, 0), (1, m)).copy_from(&u.transpose());
            samples.view_mut((t, m), (1, p)).copy_from(&y.transpose());
        }
        x = x_next;
    }
    states.push(x);
    Ok(Simulation {
        trajectory: Trajectory::new(model.dims(), samples)?,
        states,
    })
}

/// Three-state single-input single-output benchmark plant.
///
/// A lightly damped oscillatory pair (poles `0.9 ± 0.2i`) in series with a
/// first-order lag at `0.5`. Process noise std `0.01`, measurement noise std
/// `0.05`; use [`StochasticLtiModel::with_noise`] to change them.
pub fn default_benchmark() -> StochasticLtiModel {
    let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.2, 0.9, 0.3, 0.0, 0.0, 0.5]);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let d = DMatrix::zeros(1, 1);
    StochasticLtiModel::new(
        a,
        b,
        c,
        d,
        DMatrix::identity(3, 3) * 1e-4,
        DMatrix::identity(1, 1) * 2.5e-3,
    )
    .expect("benchmark plant is well formed")
}

/// Random plant with spectral radius `rho` (0 < rho < 1), standard-normal
/// `B`, `C`, `D` and diagonal noise of the given standard deviations.
pub fn random_stable(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    p: usize,
    rho: f64,
    process_std: f64,
    measurement_std: f64,
) -> StochasticLtiModel {
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut a = gauss(n, n);
    let radius = linalg::spectral_radius(&a).max(1e-12);
    a *= rho / radius;
    let b = gauss(n, m);
    let c = gauss(p, n);
    let d = gauss(p, m) * 0.5;
    StochasticLtiModel::new(
        a,
        b,
        c,
        d,
        DMatrix::identity(n, n) * process_std.powi(2),
        DMatrix::identity(p, p) * measurement_std.powi(2),
    )
    .expect("random plant is well formed")
}
