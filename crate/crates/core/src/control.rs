//! Receding-horizon predictive controllers built on the subspace predictor.
//!
//! All controllers minimize (a variant of) the tracking cost
//! `J = ‖u_f − u_ref‖²_R + ‖y_f − y_ref‖²_Q` over the planned input `u_f`:
//!
//! * [`spc`] and [`certainty_equivalence`] plug in the predicted mean;
//! * [`deepc`] optimizes a data-combination vector `g` with a regularizer;
//! * [`optimistic`] lets the predicted mean move at a KL price `λ`;
//! * [`robust`] takes the worst mean inside a KL ball via its `λ`-dual.
//!
//! The KL divergence between two Gaussians with the same covariance `Σ̂` is
//! `½‖μ − μ̂‖²_{Σ̂⁻¹}`; the covariance-mismatch constant never enters because
//! both sides share `Σ̂_pred`. Reported objectives are expected costs (they
//! include `tr(QΣ̂_pred)`), except for SPC and DeePC which are deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::{ConditionalGaussian, PredictiveModel};
use crate::error::{Error, Result};
use crate::linalg::{self, SymEig};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::trajectory::{DataMatrix, SignalDims};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub dims: SignalDims,
    pub l_ini: usize,
    pub l_f: usize,
    /// Output weight, `pL_f × pL_f`, PSD.
    pub q: DMatrix<f64>,
    /// Input weight, `mL_f × mL_f`, PD.
    pub r: DMatrix<f64>,
    pub u_ref: DVector<f64>,
    pub y_ref: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    /// Optional bounds on the (mean) output trajectory.
    pub y_box: Option<(DVector<f64>, DVector<f64>)>,
}

/// Repeats a per-step vector `l_f` times.
pub fn repeat_per_step(v: &DVector<f64>, l_f: usize) -> DVector<f64> {
    let k = v.len();
    DVector::from_fn(k * l_f, |i, _| v[i % k])
}

impl ControlProblem {
    /// Zero references and no constraints.
    pub fn new(dims: SignalDims, l_ini: usize, l_f: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let (nu, ny) = (dims.m * l_f, dims.p * l_f);
        let cp = Self {
            dims,
            l_ini,
            l_f,
            q,
            r,
            u_ref: DVector::zeros(nu),
            y_ref: DVector::zeros(ny),
            u_min: DVector::from_element(nu, f64::NEG_INFINITY),
            u_max: DVector::from_element(nu, f64::INFINITY),
            y_box: None,
        };
        cp.validate()?;
        Ok(cp)
    }

    /// Block-diagonal weights built from per-step diagonals (`p` and `m` entries).
    pub fn diagonal(dims: SignalDims, l_ini: usize, l_f: usize, q_diag: &[f64], r_diag: &[f64]) -> Result<Self> {
        if q_diag.len() != dims.p || r_diag.len() != dims.m {
            return Err(Error::Shape(format!(
                "per-step weights need {} output and {} input entries",
                dims.p, dims.m
            )));
        }
        let q = DMatrix::from_diagonal(&repeat_per_step(&DVector::from_column_slice(q_diag), l_f));
        let r = DMatrix::from_diagonal(&repeat_per_step(&DVector::from_column_slice(r_diag), l_f));
        Self::new(dims, l_ini, l_f, q, r)
    }

    pub fn with_references(mut self, u_ref: DVector<f64>, y_ref: DVector<f64>) -> Result<Self> {
        self.u_ref = u_ref;
        self.y_ref = y_ref;
        self.validate()?;
        Ok(self)
    }

    pub fn with_input_box(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        self.u_min = lo;
        self.u_max = hi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_output_box(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        self.y_box = Some((lo, hi));
        self.validate()?;
        Ok(self)
    }

    pub fn n_u(&self) -> usize {
        self.dims.m * self.l_f
    }

    pub fn n_y(&self) -> usize {
        self.dims.p * self.l_f
    }

    pub fn validate(&self) -> Result<()> {
        let (nu, ny) = (self.n_u(), self.n_y());
        if self.l_f == 0 {
            return Err(Error::Shape("future horizon must be positive".into()));
        }
        if self.q.shape() != (ny, ny) || self.r.shape() != (nu, nu) {
            return Err(Error::Shape(format!("weights must be {ny}x{ny} (Q) and {nu}x{nu} (R)")));
        }
        if self.u_ref.len() != nu || self.y_ref.len() != ny {
            return Err(Error::Shape("reference lengths do not match the horizon".into()));
        }
        if self.u_min.len() != nu || self.u_max.len() != nu {
            return Err(Error::Shape("input box length does not match the horizon".into()));
        }
        if let Some((lo, hi)) = &self.y_box {
            if lo.len() != ny || hi.len() != ny {
                return Err(Error::Shape("output box length does not match the horizon".into()));
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
                return Err(Error::InvalidMatrix("output box has lower > upper".into()));
            }
        }
        if self
            .u_min
            .iter()
            .zip(self.u_max.iter())
            .any(|(l, h)| l.is_nan() || h.is_nan() || l > h)
        {
            return Err(Error::InvalidMatrix("input box has lower > upper".into()));
        }
        linalg::check_finite(&self.q, "Q")?;
        linalg::check_finite(&self.r, "R")?;
        if self.u_ref.iter().chain(self.y_ref.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("references must be finite".into()));
        }
        if !linalg::is_psd(&self.q, 1e-10) {
            return Err(Error::InvalidMatrix("Q must be positive semidefinite".into()));
        }
        if linalg::chol_psd(&self.r, 0.0).is_err() {
            return Err(Error::InvalidMatrix("R must be positive definite".into()));
        }
        Ok(())
    }

    /// `‖u − u_ref‖²_R + ‖y − y_ref‖²_Q`.
    pub fn cost(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let du = u - &self.u_ref;
        let dy = y - &self.y_ref;
        du.dot(&(&self.r * &du)) + dy.dot(&(&self.q * &dy))
    }

    /// Expected cost when `y ~ N(mean, cov)`.
    pub fn expected_cost(&self, u: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        self.cost(u, mean) + (&self.q * cov).trace()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSettings {
    pub qp: QpSettings,
    pub rank_tol: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            qp: QpSettings::default(),
            rank_tol: linalg::DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    pub u_f: DVector<f64>,
    /// Predicted future outputs. DeePC returns `Y_f g` with zero covariance.
    pub y_pred: ConditionalGaussian,
    pub objective: f64,
    /// Data-combination vector (DeePC only).
    pub g: Option<DVector<f64>>,
    pub solver: QpSolution,
    /// `λ` for optimistic/robust, `λ_g` for DeePC, `∞` for SPC and CE.
    pub lambda_effective: f64,
}

impl ControlResult {
    /// Input block of the first planned step.
    pub fn first_input(&self, m: usize) -> DVector<f64> {
        self.u_f.rows(0, m).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// `‖(I − Π)g‖²` with `Π` the projector onto the row space of `[W_p; U_f]`.
    Proj2,
    /// `‖g‖²`.
    Sq2,
    /// `‖g‖₁`.
    L1,
}

fn check_model(pm: &PredictiveModel, w_ini: &DVector<f64>, cp: &ControlProblem) -> Result<()> {
    if pm.dims != cp.dims || pm.l_ini != cp.l_ini || pm.l_f != cp.l_f {
        return Err(Error::Shape(format!(
            "predictor is (m={}, p={}, L_ini={}, L_f={}), control problem is (m={}, p={}, L_ini={}, L_f={})",
            pm.dims.m, pm.dims.p, pm.l_ini, pm.l_f, cp.dims.m, cp.dims.p, cp.l_ini, cp.l_f
        )));
    }
    pm.check_inputs(w_ini)
}

fn finish(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    let sol = qp::solve(prob, settings)?;
    match sol.status {
        QpStatus::Infeasible => Err(Error::Infeasible),
        QpStatus::MaxIter => {
            log::warn!("controller QP stopped at the iteration limit");
            Ok(sol)
        }
        QpStatus::Optimal => Ok(sol),
    }
}

/// `min ‖u − u_ref‖²_R + ‖M_u u + c − y_ref‖²_W` over the input box.
fn tracking_qp(
    m_u: &DMatrix<f64>,
    c: &DVector<f64>,
    weight: &DMatrix<f64>,
    cp: &ControlProblem,
    settings: &QpSettings,
) -> Result<QpSolution> {
    let mtw = m_u.transpose() * weight;
    let p = linalg::symmetrize(&((&mtw * m_u + &cp.r) * 2.0));
    let q = (&mtw * (c - &cp.y_ref) - &cp.r * &cp.u_ref) * 2.0;
    let prob = QpProblem::new(p, q)?.with_bounds(cp.u_min.clone(), cp.u_max.clone())?;
    finish(&prob, settings)
}

/// Same cost with `y` kept as a variable tied by `y = M_u u + c`, so that an
/// output box can be imposed. Returns the solution over `[u; y]`.
fn tracking_qp_with_outputs(
    m_u: &DMatrix<f64>,
    c: &DVector<f64>,
    cp: &ControlProblem,
    y_lo: &DVector<f64>,
    y_hi: &DVector<f64>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    let (nu, ny) = (cp.n_u(), cp.n_y());
    let n = nu + ny;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (nu, nu)).copy_from(&(&cp.r * 2.0));
    p.view_mut((nu, nu), (ny, ny)).copy_from(&(&cp.q * 2.0));
    let mut q = DVector::zeros(n);
    q.rows_mut(0, nu).copy_from(&(&cp.r * &cp.u_ref * -2.0));
    q.rows_mut(nu, ny).copy_from(&(&cp.q * &cp.y_ref * -2.0));
    let mut a = DMatrix::zeros(ny, n);
    a.view_mut((0, 0), (ny, nu)).copy_from(&(-m_u));
    a.view_mut((0, nu), (ny, ny)).fill_with_identity();
    let lower = stack_vec(&cp.u_min, y_lo);
    let upper = stack_vec(&cp.u_max, y_hi);
    let prob = QpProblem::new(p, q)?
        .with_equalities(a, c.clone())?
        .with_bounds(lower, upper)?;
    finish(&prob, settings)
}

fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Subspace predictive control: certainty-equivalent tracking of the
/// predicted mean `M_u u_f + M_ini w_ini`.
pub fn spc(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    s: &ControlSettings,
) -> Result<ControlResult> {
    check_model(pm, w_ini, cp)?;
    let c = &pm.m_ini * w_ini;
    let (sol, u) = match &cp.y_box {
        None => {
            let sol = tracking_qp(&pm.m_u, &c, &cp.q, cp, &s.qp)?;
            let u = sol.x.clone();
            (sol, u)
        }
        Some((lo, hi)) => {
            let sol = tracking_qp_with_outputs(&pm.m_u, &c, cp, lo, hi, &s.qp)?;
            let u = sol.x.rows(0, cp.n_u()).into_owned();
            (sol, u)
        }
    };
    let mean = &pm.m_u * &u + &c;
    Ok(ControlResult {
        objective: cp.cost(&u, &mean),
        y_pred: ConditionalGaussian {
            mean,
            cov: pm.cov.clone(),
        },
        u_f: u,
        g: None,
        solver: sol,
        lambda_effective: f64::INFINITY,
    })
}

/// Minimizes the expected cost under the predictive distribution. The
/// covariance only adds the constant `tr(QΣ̂_pred)`, so the minimizer is the
/// SPC one; the reported objective includes the trace.
pub fn certainty_equivalence(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    s: &ControlSettings,
) -> Result<ControlResult> {
    let mut res = spc(pm, w_ini, cp, s)?;
    res.objective = cp.expected_cost(&res.u_f, &res.y_pred.mean, &pm.cov);
    Ok(res)
}

/// Data-enabled predictive control over `x = [g; u_f; y_f]` with
/// `[W_p; U_f; Y_f] g = [w_ini; u_f; y_f]`.
pub fn deepc(
    w: &DataMatrix,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    reg: Regularizer,
    lambda_g: f64,
    s: &ControlSettings,
) -> Result<ControlResult> {
    if !(lambda_g >= 0.0) || !lambda_g.is_finite() {
        return Err(Error::InvalidMatrix(format!(
            "lambda_g must be non-negative, got {lambda_g}"
        )));
    }
    if w.dims() != cp.dims || w.l_ini() != cp.l_ini || w.l_f() != cp.l_f {
        return Err(Error::Shape(
            "data matrix partition does not match the control problem".into(),
        ));
    }
    let q_ini = w.dims().q() * w.l_ini();
    if w_ini.len() != q_ini {
        return Err(Error::Shape(format!(
            "w_ini has length {}, expected {q_ini}",
            w_ini.len()
        )));
    }
    let d = w.cols();
    let (nu, ny) = (cp.n_u(), cp.n_y());
    let n = d + nu + ny;

    let p_gg = match reg {
        Regularizer::Proj2 => {
            let z = w.free();
            let pi = linalg::pinv(&z, s.rank_tol)? * &z;
            linalg::symmetrize(&((DMatrix::identity(d, d) - pi) * (2.0 * lambda_g)))
        }
        Regularizer::Sq2 => DMatrix::identity(d, d) * (2.0 * lambda_g),
        Regularizer::L1 => DMatrix::zeros(d, d),
    };
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (d, d)).copy_from(&p_gg);
    p.view_mut((d, d), (nu, nu)).copy_from(&(&cp.r * 2.0));
    p.view_mut((d + nu, d + nu), (ny, ny)).copy_from(&(&cp.q * 2.0));
    let mut q = DVector::zeros(n);
    q.rows_mut(d, nu).copy_from(&(&cp.r * &cp.u_ref * -2.0));
    q.rows_mut(d + nu, ny).copy_from(&(&cp.q * &cp.y_ref * -2.0));

    let mut a = DMatrix::zeros(q_ini + nu + ny, n);
    a.view_mut((0, 0), (q_ini, d)).copy_from(&w.w_p());
    a.view_mut((q_ini, 0), (nu, d)).copy_from(&w.u_f());
    a.view_mut((q_ini, d), (nu, nu))
        .copy_from(&(-DMatrix::identity(nu, nu)));
    a.view_mut((q_ini + nu, 0), (ny, d)).copy_from(&w.y_f());
    a.view_mut((q_ini + nu, d + nu), (ny, ny))
        .copy_from(&(-DMatrix::identity(ny, ny)));
    let mut b = DVector::zeros(q_ini + nu + ny);
    b.rows_mut(0, q_ini).copy_from(w_ini);

    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    lower.rows_mut(d, nu).copy_from(&cp.u_min);
    upper.rows_mut(d, nu).copy_from(&cp.u_max);
    if let Some((lo, hi)) = &cp.y_box {
        lower.rows_mut(d + nu, ny).copy_from(lo);
        upper.rows_mut(d + nu, ny).copy_from(hi);
    }
    let mut prob = QpProblem::new(p, q)?.with_equalities(a, b)?.with_bounds(lower, upper)?;
    if reg == Regularizer::L1 {
        prob = qp::l1_epigraph(&prob, lambda_g, &(0..d).collect::<Vec<_>>())?;
    }
    let sol = finish(&prob, &s.qp)?;
    let g = sol.x.rows(0, d).into_owned();
    let u = sol.x.rows(d, nu).into_owned();
    let y = sol.x.rows(d + nu, ny).into_owned();
    let h = match reg {
        Regularizer::Proj2 => 0.5 * g.dot(&(&p_gg * &g)) / lambda_g.max(f64::MIN_POSITIVE),
        Regularizer::Sq2 => g.norm_squared(),
        Regularizer::L1 => g.iter().map(|v| v.abs()).sum(),
    };
    Ok(ControlResult {
        objective: cp.cost(&u, &y) + lambda_g * h,
        y_pred: ConditionalGaussian {
            mean: y,
            cov: DMatrix::zeros(ny, ny),
        },
        u_f: u,
        g: Some(g),
        solver: sol,
        lambda_effective: lambda_g,
    })
}

/// Lower-triangular `G` with `GGᵀ = Σ̂_pred` (after jitter if singular).
fn cov_factor(pm: &PredictiveModel) -> Result<DMatrix<f64>> {
    let (cov, _) = linalg::jitter_if_needed(&pm.cov);
    linalg::chol_psd(&cov, 0.0)
}

/// Spectral data of `GᵀQG`, shared by every `λ`-dependent quantity.
struct KlGeometry {
    g: DMatrix<f64>,
    gqg: SymEig,
}

impl KlGeometry {
    fn new(pm: &PredictiveModel, cp: &ControlProblem) -> Result<Self> {
        let g = cov_factor(pm)?;
        let gqg = linalg::sym_eig(&(g.transpose() * &cp.q * &g))?;
        Ok(Self { g, gqg })
    }

    /// `G f(eigs(GᵀQG)) Gᵀ`.
    fn sandwich(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.g * self.gqg.map(f) * self.g.transpose()))
    }

    /// `(λΣ̂⁻¹ − Q)⁻¹ = G(λI − GᵀQG)⁻¹Gᵀ`.
    fn robust_inverse(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let gap = self
            .gqg
            .eigenvalues
            .iter()
            .map(|e| (lambda - e).abs())
            .fold(f64::INFINITY, f64::min);
        if gap <= 1e-14 * lambda.abs().max(1.0) {
            return Err(Error::InvalidMatrix(format!("λΣ⁻¹ − Q is singular at λ = {lambda}")));
        }
        Ok(self.sandwich(|e| 1.0 / (lambda - e)))
    }

    /// `((λ/2)Σ̂⁻¹ + Q)⁻¹`.
    fn optimistic_inverse(&self, lambda: f64) -> DMatrix<f64> {
        self.sandwich(|e| 1.0 / (0.5 * lambda + e))
    }

    fn lambda0(&self) -> f64 {
        self.gqg.max().max(0.0) * (1.0 + 1e-6)
    }

    /// `‖v‖²_{Σ̂⁻¹}`.
    fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        self.g
            .solve_lower_triangular(v)
            .map(|z| z.norm_squared())
            .unwrap_or(f64::INFINITY)
    }

    fn inverse_cov(&self) -> DMatrix<f64> {
        let n = self.g.nrows();
        let gi = self
            .g
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        linalg::symmetrize(&(gi.transpose() * gi))
    }
}

/// Distributionally optimistic control: jointly choose `u_f` and the output
/// mean `μ`, paying `λ·KL = (λ/2)‖μ − μ̂_pred(u_f)‖²_{Σ̂⁻¹}` for moving it.
///
/// Without an output box, `μ` is eliminated in closed form and the problem is
/// a QP in `u_f` with output weight `Q − Q((λ/2)Σ̂⁻¹ + Q)⁻¹Q`.
pub fn optimistic(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    lambda: f64,
    s: &ControlSettings,
) -> Result<ControlResult> {
    check_model(pm, w_ini, cp)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::LambdaTooSmall { lambda, threshold: 0.0 });
    }
    let geo = KlGeometry::new(pm, cp)?;
    let c = &pm.m_ini * w_ini;
    let (nu, ny) = (cp.n_u(), cp.n_y());

    let (sol, u, mu) = match &cp.y_box {
        None => {
            let b_inv = geo.optimistic_inverse(lambda);
            let weight = linalg::symmetrize(&(&cp.q - &cp.q * &b_inv * &cp.q));
            let sol = tracking_qp(&pm.m_u, &c, &weight, cp, &s.qp)?;
            let u = sol.x.clone();
            let mu_hat = &pm.m_u * &u + &c;
            let mu = &mu_hat - &b_inv * (&cp.q * (&mu_hat - &cp.y_ref));
            (sol, u, mu)
        }
        Some((lo, hi)) => {
            let s_inv = geo.inverse_cov();
            let n = nu + ny;
            let mts = pm.m_u.transpose() * &s_inv;
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (nu, nu))
                .copy_from(&(&cp.r * 2.0 + &mts * &pm.m_u * lambda));
            p.view_mut((0, nu), (nu, ny)).copy_from(&(&mts * -lambda));
            p.view_mut((nu, 0), (ny, nu)).copy_from(&(mts.transpose() * -lambda));
            p.view_mut((nu, nu), (ny, ny))
                .copy_from(&(&cp.q * 2.0 + &s_inv * lambda));
            let mut q = DVector::zeros(n);
            q.rows_mut(0, nu)
                .copy_from(&(&cp.r * &cp.u_ref * -2.0 + &mts * &c * lambda));
            q.rows_mut(nu, ny)
                .copy_from(&(&cp.q * &cp.y_ref * -2.0 - &s_inv * &c * lambda));
            let prob = QpProblem::new(linalg::symmetrize(&p), q)?
                .with_bounds(stack_vec(&cp.u_min, lo), stack_vec(&cp.u_max, hi))?;
            let sol = finish(&prob, &s.qp)?;
            let u = sol.x.rows(0, nu).into_owned();
            let mu = sol.x.rows(nu, ny).into_owned();
            (sol, u, mu)
        }
    };
    let mu_hat = &pm.m_u * &u + &c;
    let objective = cp.expected_cost(&u, &mu, &pm.cov) + 0.5 * lambda * geo.mahalanobis_sq(&(&mu - &mu_hat));
    Ok(ControlResult {
        u_f: u,
        y_pred: ConditionalGaussian {
            mean: mu,
            cov: pm.cov.clone(),
        },
        objective,
        g: None,
        solver: sol,
        lambda_effective: lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub h: DMatrix<f64>,
    pub psd: bool,
}

/// `H(λ) = λ²M_uᵀΣ̂⁻¹(λΣ̂⁻¹ − Q)⁻¹Σ̂⁻¹M_u − λM_uᵀΣ̂⁻¹M_u + R`, evaluated in
/// the equivalent form `M_uᵀ(Q + Q(λΣ̂⁻¹ − Q)⁻¹Q)M_u + R`.
///
/// The robust objective is `u_fᵀH u_f + (linear) + const`, so its second
/// derivative is `2H`. As `λ → ∞`, `H → M_uᵀQM_u + R`.
pub fn hessian(pm: &PredictiveModel, cp: &ControlProblem, lambda: f64) -> Result<Hessian> {
    let geo = KlGeometry::new(pm, cp)?;
    hessian_with(&geo, pm, cp, lambda)
}

fn hessian_with(geo: &KlGeometry, pm: &PredictiveModel, cp: &ControlProblem, lambda: f64) -> Result<Hessian> {
    let a_inv = geo.robust_inverse(lambda)?;
    let weight = &cp.q + &cp.q * a_inv * &cp.q;
    let h = linalg::symmetrize(&(pm.m_u.transpose() * weight * &pm.m_u + &cp.r));
    let psd = linalg::is_psd(&h, 1e-10);
    Ok(Hessian { h, psd })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaThreshold {
    /// Smallest `λ` (with a `1e-6` relative margin) making `λΣ̂⁻¹ − Q` PD.
    pub lambda0: f64,
    /// Smallest `λ ≥ λ₀` with `H(λ)` PSD.
    pub lambda_psd: f64,
}

pub fn lambda_threshold(pm: &PredictiveModel, cp: &ControlProblem) -> Result<LambdaThreshold> {
    let geo = KlGeometry::new(pm, cp)?;
    lambda_threshold_with(&geo, pm, cp)
}

fn lambda_threshold_with(geo: &KlGeometry, pm: &PredictiveModel, cp: &ControlProblem) -> Result<LambdaThreshold> {
    let lambda0 = geo.lambda0();
    if lambda0 == 0.0 {
        // Q vanishes in the Σ̂ metric: every λ > 0 works and H = R + M_uᵀQM_u.
        return Ok(LambdaThreshold {
            lambda0,
            lambda_psd: lambda0,
        });
    }
    let psd_at = |l: f64| -> bool {
        let l = if l > 0.0 { l } else { f64::MIN_POSITIVE };
        hessian_with(geo, pm, cp, l).map(|h| h.psd).unwrap_or(false)
    };
    if psd_at(lambda0) {
        return Ok(LambdaThreshold {
            lambda0,
            lambda_psd: lambda0,
        });
    }
    let (mut lo, mut hi) = (lambda0, 1e12);
    if !psd_at(hi) {
        log::warn!("H(λ) is not PSD anywhere on [{lambda0:.3e}, 1e12]");
        return Ok(LambdaThreshold {
            lambda0,
            lambda_psd: f64::INFINITY,
        });
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if psd_at(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(LambdaThreshold {
        lambda0,
        lambda_psd: hi,
    })
}

/// Worst-case mean `μ* = μ̂ + (λΣ̂⁻¹ − Q)⁻¹Q(μ̂ − y_ref)` for the planned input.
pub fn robust_mean(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    lambda: f64,
    u_f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let geo = KlGeometry::new(pm, cp)?;
    let mu_hat = pm.mean(u_f, w_ini);
    Ok(&mu_hat + geo.robust_inverse(lambda)? * (&cp.q * (&mu_hat - &cp.y_ref)))
}

/// Dual upper bound on the worst-case expected cost over the KL ball of
/// radius `eps` around `N(μ̂_pred, Σ̂_pred)`:
/// `E_{μ*}[J] − λ(‖μ* − μ̂‖²_{Σ̂⁻¹} − 2ε)`.
pub fn robust_dual_bound(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    lambda: f64,
    u_f: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    let geo = KlGeometry::new(pm, cp)?;
    let mu_hat = pm.mean(u_f, w_ini);
    let mu = &mu_hat + geo.robust_inverse(lambda)? * (&cp.q * (&mu_hat - &cp.y_ref));
    let dist = geo.mahalanobis_sq(&(&mu - &mu_hat));
    Ok(cp.expected_cost(u_f, &mu, &pm.cov) - lambda * (dist - 2.0 * eps))
}

/// KL divergence `½‖μ − μ̂‖²_{Σ̂⁻¹}` between equal-covariance Gaussians.
pub fn mean_shift_kl(
    pm: &PredictiveModel,
    cp: &ControlProblem,
    mu: &DVector<f64>,
    mu_hat: &DVector<f64>,
) -> Result<f64> {
    let geo = KlGeometry::new(pm, cp)?;
    Ok(0.5 * geo.mahalanobis_sq(&(mu - mu_hat)))
}

/// The robust objective in its expanded dual form,
/// `‖λΣ̂⁻¹μ̂ − Qy_ref‖²_{(λΣ̂⁻¹−Q)⁻¹} − λ‖μ̂‖²_{Σ̂⁻¹} + ‖u_f − u_ref‖²_R`.
///
/// It differs from [`robust`]'s reported objective by the constant
/// `y_refᵀQy_ref + tr(QΣ̂_pred)`.
pub fn robust_expanded_objective(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    lambda: f64,
    u_f: &DVector<f64>,
) -> Result<f64> {
    let geo = KlGeometry::new(pm, cp)?;
    let s_inv = geo.inverse_cov();
    let mu_hat = pm.mean(u_f, w_ini);
    let b = &s_inv * &mu_hat * lambda - &cp.q * &cp.y_ref;
    let a_inv = geo.robust_inverse(lambda)?;
    let du = u_f - &cp.u_ref;
    Ok(b.dot(&(a_inv * &b)) - lambda * mu_hat.dot(&(&s_inv * &mu_hat)) + du.dot(&(&cp.r * &du)))
}

/// Distributionally robust control: minimizes the `λ`-dual of the worst-case
/// expected cost over a KL ball,
/// `‖u_f − u_ref‖²_R + ‖μ̂ − y_ref‖²_{Q + Q(λΣ̂⁻¹ − Q)⁻¹Q} + tr(QΣ̂_pred)`.
///
/// Requires `λ ≥ λ₀` and `H(λ)` PSD; otherwise fails with
/// [`Error::LambdaTooSmall`] carrying `λ_psd`.
pub fn robust(
    pm: &PredictiveModel,
    w_ini: &DVector<f64>,
    cp: &ControlProblem,
    lambda: f64,
    s: &ControlSettings,
) -> Result<ControlResult> {
    check_model(pm, w_ini, cp)?;
    if cp.y_box.is_some() {
        return Err(Error::Unsupported(
            "output constraints are not available for the robust controller".into(),
        ));
    }
    let geo = KlGeometry::new(pm, cp)?;
    let lambda0 = geo.lambda0();
    if !(lambda > 0.0) || !lambda.is_finite() || lambda < lambda0 {
        let th = lambda_threshold_with(&geo, pm, cp)?;
        return Err(Error::LambdaTooSmall {
            lambda,
            threshold: th.lambda_psd,
        });
    }
    if !hessian_with(&geo, pm, cp, lambda)?.psd {
        let th = lambda_threshold_with(&geo, pm, cp)?;
        return Err(Error::LambdaTooSmall {
            lambda,
            threshold: th.lambda_psd,
        });
    }
    let a_inv = geo.robust_inverse(lambda)?;
    let weight = linalg::symmetrize(&(&cp.q + &cp.q * &a_inv * &cp.q));
    let c = &pm.m_ini * w_ini;
    let sol = tracking_qp(&pm.m_u, &c, &weight, cp, &s.qp)?;
    let u = sol.x.clone();
    let mu_hat = &pm.m_u * &u + &c;
    let e = &mu_hat - &cp.y_ref;
    let mu = &mu_hat + &a_inv * (&cp.q * &e);
    let du = &u - &cp.u_ref;
    let objective = du.dot(&(&cp.r * &du)) + e.dot(&(&weight * &e)) + (&cp.q * &pm.cov).trace();
    Ok(ControlResult {
        u_f: u,
        y_pred: ConditionalGaussian {
            mean: mu,
            cov: pm.cov.clone(),
        },
        objective,
        g: None,
        solver: sol,
        lambda_effective: lambda,
    })
}
