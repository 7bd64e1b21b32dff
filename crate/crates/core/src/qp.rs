//! Dense convex quadratic programming.
//!
//! Solves `min ½xᵀPx + qᵀx` subject to `A_eq x = b_eq` and `lower ≤ x ≤ upper`
//! with an operator-splitting (ADMM) iteration in the style of OSQP. Problems
//! are equilibrated before iterating. At every convergence check a candidate
//! active set is read off the duals and the reduced KKT system is solved; the
//! candidate is accepted only if it passes primal, sign and stationarity
//! checks on the original data.
//!
//! Infinite bounds are replaced internally by ±[`INF`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

/// Sentinel magnitude standing in for an infinite bound.
pub const INF: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem `min ½xᵀPx + qᵀx`.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(Self {
            p,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        })
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Result<Self> {
        if a_eq.ncols() != self.n() || a_eq.nrows() != b_eq.len() {
            return Err(Error::Shape(format!(
                "equality block is {}x{} with {} right-hand sides, problem has {} variables",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len(),
                self.n()
            )));
        }
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        Ok(self)
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != self.n() || upper.len() != self.n() {
            return Err(Error::Shape("bound vectors must have one entry per variable".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.shape() != (n, n)
            || self.a_eq.ncols() != n
            || self.a_eq.nrows() != self.b_eq.len()
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(Error::Shape("inconsistent QP dimensions".into()));
        }
        linalg::check_finite(&self.p, "P")?;
        linalg::check_finite(&self.a_eq, "A_eq")?;
        if self.q.iter().chain(self.b_eq.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("q and b_eq must be finite".into()));
        }
        for i in 0..n {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidMatrix(format!("bad bounds [{l}, {u}] on variable {i}")));
            }
        }
        if n > 0 && !linalg::is_psd(&self.p, 1e-8) {
            return Err(Error::InvalidMatrix("P is not positive semidefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_pinf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    pub check_every: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_pinf: 1e-5,
            max_iter: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
            check_every: 25,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Multipliers `ν` of the equality constraints.
    pub dual_eq: DVector<f64>,
    /// Bound multipliers: positive at an active upper bound, negative at an
    /// active lower bound, so that `Px + q + A_eqᵀν + dual_bounds = 0`.
    pub dual_bounds: DVector<f64>,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Euclidean norm of `Px + q + A_eqᵀν + dual_bounds`.
    pub fn stationarity(&self, prob: &QpProblem) -> f64 {
        (&prob.p * &self.x + &prob.q + prob.a_eq.transpose() * &self.dual_eq + &self.dual_bounds).norm()
    }
}

/// Constraint data in the form `l ≤ A x ≤ u`.
struct Stacked {
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    /// Variable index of each bound row (rows after the equalities).
    bound_var: Vec<usize>,
    m_eq: usize,
}

fn clip_inf(v: f64) -> f64 {
    v.clamp(-INF, INF)
}

fn stack(prob: &QpProblem) -> Stacked {
    let n = prob.n();
    let m_eq = prob.a_eq.nrows();
    let bound_var: Vec<usize> = (0..n)
        .filter(|&i| prob.lower[i] > -INF || prob.upper[i] < INF)
        .collect();
    let m = m_eq + bound_var.len();
    let mut a = DMatrix::zeros(m, n);
    a.rows_mut(0, m_eq).copy_from(&prob.a_eq);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    l.rows_mut(0, m_eq).copy_from(&prob.b_eq);
    u.rows_mut(0, m_eq).copy_from(&prob.b_eq);
    for (k, &i) in bound_var.iter().enumerate() {
        a[(m_eq + k, i)] = 1.0;
        l[m_eq + k] = clip_inf(prob.lower[i]);
        u[m_eq + k] = clip_inf(prob.upper[i]);
    }
    Stacked {
        a,
        l,
        u,
        bound_var,
        m_eq,
    }
}

/// Ruiz equilibration of the KKT matrix plus a cost scaling `c`.
/// Scaled data: `P̄ = c·DPD`, `q̄ = c·Dq`, `Ā = EAD`, `l̄ = El`, `ū = Eu`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn equilibrate(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, iters: usize) -> Scaling {
    let (n, m) = (p.nrows(), a.nrows());
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut ps = p.clone();
    let mut as_ = a.clone();
    let limit = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let col = ps.column(j).amax().max(as_.column(j).amax());
            dd[j] = 1.0 / limit(col).sqrt();
        }
        let mut de = DVector::zeros(m);
        for i in 0..m {
            de[i] = 1.0 / limit(as_.row(i).amax()).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                ps[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..m {
                as_[(i, j)] *= de[i] * dd[j];
            }
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
    }
    let mean_col = if n == 0 {
        1.0
    } else {
        (0..n).map(|j| ps.column(j).amax()).sum::<f64>() / n as f64
    };
    let qs = q.component_mul(&d);
    let c = 1.0 / limit(mean_col.max(inf_norm(&qs)));
    Scaling { d, e, c }
}

struct Workspace<'a> {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    scaling: Scaling,
    orig: &'a QpProblem,
    st: Stacked,
}

impl Workspace<'_> {
    fn unscale_x(&self, xs: &DVector<f64>) -> DVector<f64> {
        xs.component_mul(&self.scaling.d)
    }
    fn unscale_y(&self, ys: &DVector<f64>) -> DVector<f64> {
        ys.component_mul(&self.scaling.e) / self.scaling.c
    }
    fn unscale_z(&self, zs: &DVector<f64>) -> DVector<f64> {
        zs.component_div(&self.scaling.e)
    }

    fn is_eq_row(&self, i: usize) -> bool {
        i < self.st.m_eq || self.st.l[i] == self.st.u[i]
    }

    fn rho_vec(&self, rho: f64) -> DVector<f64> {
        DVector::from_fn(self.a.nrows(), |i, _| if self.is_eq_row(i) { rho * 1e3 } else { rho })
    }

    fn factor(&self, rho_v: &DVector<f64>, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = self.p.nrows();
        let mut k = &self.p + DMatrix::identity(n, n) * sigma;
        let mut at_r = self.a.transpose();
        for (i, mut col) in at_r.column_iter_mut().enumerate() {
            col *= rho_v[i];
        }
        k += at_r * &self.a;
        Cholesky::new(linalg::symmetrize(&k))
            .ok_or_else(|| Error::InvalidMatrix("ADMM system matrix is not positive definite".into()))
    }

    fn tolerances(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, s: &QpSettings) -> Residuals {
        let ax = &self.st.a * x;
        let px = &self.orig.p * x;
        let aty = self.st.a.transpose() * y;
        let prim = (&ax - z).amax_or_zero();
        let dual = (&px + &self.orig.q + &aty).amax_or_zero();
        let eps_prim = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(z));
        let eps_dual = s.eps_abs + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.orig.q));
        Residuals {
            prim,
            dual,
            eps_prim,
            eps_dual,
        }
    }

    fn assemble(
        &self,
        x: DVector<f64>,
        y: &DVector<f64>,
        status: QpStatus,
        res: &Residuals,
        iterations: usize,
        polished: bool,
    ) -> QpSolution {
        let m_eq = self.st.m_eq;
        let mut dual_bounds = DVector::zeros(self.orig.n());
        for (k, &i) in self.st.bound_var.iter().enumerate() {
            dual_bounds[i] = y[m_eq + k];
        }
        QpSolution {
            objective: self.orig.objective(&x),
            x,
            status,
            primal_residual: res.prim,
            dual_residual: res.dual,
            iterations,
            dual_eq: y.rows(0, m_eq).into_owned(),
            dual_bounds,
            polished,
        }
    }

    /// Reduced KKT solve on the active set guessed from `(z, y)` (scaled).
    fn polish(
        &self,
        zs: &DVector<f64>,
        ys: &DVector<f64>,
        s: &QpSettings,
    ) -> Option<(DVector<f64>, DVector<f64>, Residuals)> {
        let n = self.p.nrows();
        let m = self.a.nrows();
        let mut rows = Vec::new();
        let mut rhs_b = Vec::new();
        let mut sign = Vec::new();
        for i in 0..m {
            if self.is_eq_row(i) {
                rows.push(i);
                rhs_b.push(self.l[i]);
                sign.push(0i8);
            } else if zs[i] - self.l[i] < -ys[i] {
                rows.push(i);
                rhs_b.push(self.l[i]);
                sign.push(-1);
            } else if self.u[i] - zs[i] < ys[i] {
                rows.push(i);
                rhs_b.push(self.u[i]);
                sign.push(1);
            }
        }
        let k = rows.len();
        let a_act = self.a.select_rows(&rows);
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        kkt.view_mut((n, 0), (k, n)).copy_from(&a_act);
        kkt.view_mut((0, n), (n, k)).copy_from(&a_act.transpose());
        let delta = 1e-7;
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..n + k {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        for (j, b) in rhs_b.iter().enumerate() {
            rhs[n + j] = *b;
        }
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..25 {
            let r = &rhs - &kkt * &sol;
            if r.amax_or_zero() <= 1e-14 * (1.0 + rhs.amax_or_zero()) {
                break;
            }
            sol += lu.solve(&r)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xs = sol.rows(0, n).into_owned();
        let mut ys_full = DVector::zeros(m);
        for (j, &i) in rows.iter().enumerate() {
            ys_full[i] = sol[n + j];
        }

        let x = self.unscale_x(&xs);
        let y = self.unscale_y(&ys_full);
        let ax = &self.st.a * &x;
        let z = DVector::from_fn(m, |i, _| ax[i].clamp(self.st.l[i], self.st.u[i]));
        let res = self.tolerances(&x, &z, &y, s);
        if res.prim > res.eps_prim || res.dual > res.eps_dual {
            return None;
        }
        for (j, &i) in rows.iter().enumerate() {
            let wrong = match sign[j] {
                -1 => y[i] > res.eps_dual,
                1 => y[i] < -res.eps_dual,
                _ => false,
            };
            if wrong {
                return None;
            }
        }
        Some((x, y, res))
    }
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

trait AmaxOrZero {
    fn amax_or_zero(&self) -> f64;
}

impl AmaxOrZero for DVector<f64> {
    fn amax_or_zero(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amax()
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax_or_zero()
}

/// Solves the QP. Invalid problem data is an `Err`; infeasibility and
/// iteration exhaustion are reported through [`QpSolution::status`].
pub fn solve(prob: &QpProblem, s: &QpSettings) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.n();
    let st = stack(prob);
    let m = st.a.nrows();
    let scaling = equilibrate(&prob.p, &prob.q, &st.a, s.scaling_iters);
    let (d, e, c) = (&scaling.d, &scaling.e, scaling.c);
    let p = DMatrix::from_fn(n, n, |i, j| c * d[i] * prob.p[(i, j)] * d[j]);
    let q = prob.q.component_mul(d) * c;
    let a = DMatrix::from_fn(m, n, |i, j| e[i] * st.a[(i, j)] * d[j]);
    let scale_bound = |v: f64, ei: f64| if v.abs() >= INF { v } else { v * ei };
    let l = DVector::from_fn(m, |i, _| scale_bound(st.l[i], e[i]));
    let u = DVector::from_fn(m, |i, _| scale_bound(st.u[i], e[i]));
    let ws = Workspace {
        p,
        q,
        a,
        l,
        u,
        scaling,
        orig: prob,
        st,
    };

    let mut rho = s.rho;
    let mut rho_v = ws.rho_vec(rho);
    let mut chol = ws.factor(&rho_v, s.sigma)?;
    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let mut last = None;

    for iter in 1..=s.max_iter.max(1) {
        let y_prev = y.clone();
        let rhs = &x * s.sigma - &ws.q + ws.a.transpose() * (rho_v.component_mul(&z) - &y);
        let x_t = chol.solve(&rhs);
        let z_t = &ws.a * &x_t;
        x = &x_t * s.alpha + &x * (1.0 - s.alpha);
        let z_relax = &z_t * s.alpha + &z * (1.0 - s.alpha);
        let z_new = DVector::from_fn(m, |i, _| (z_relax[i] + y[i] / rho_v[i]).clamp(ws.l[i], ws.u[i]));
        y += rho_v.component_mul(&(&z_relax - &z_new));
        z = z_new;

        if iter % s.check_every.max(1) != 0 && iter != s.max_iter {
            continue;
        }
        let xu = ws.unscale_x(&x);
        let yu = ws.unscale_y(&y);
        let zu = ws.unscale_z(&z);
        let res = ws.tolerances(&xu, &zu, &yu, s);

        if s.polish && m + n > 0 {
            if let Some((xp, yp, rp)) = ws.polish(&z, &y, s) {
                log::trace!("qp polished at iteration {iter}");
                return Ok(ws.assemble(xp, &yp, QpStatus::Optimal, &rp, iter, true));
            }
        }
        if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
            return Ok(ws.assemble(xu, &yu, QpStatus::Optimal, &res, iter, false));
        }

        if m > 0 && primal_infeasible(&ws, &(&y - &y_prev), s.eps_pinf) {
            log::debug!("qp primal infeasibility certificate at iteration {iter}");
            return Ok(ws.assemble(xu, &yu, QpStatus::Infeasible, &res, iter, false));
        }

        if s.adaptive_rho && m > 0 {
            let ax = &ws.a * &x;
            let px = &ws.p * &x;
            let aty = ws.a.transpose() * &y;
            let rp = (&ax - &z).amax_or_zero() / ax.amax_or_zero().max(z.amax_or_zero()).max(1e-30);
            let rd = (&px + &ws.q + &aty).amax_or_zero()
                / px.amax_or_zero()
                    .max(aty.amax_or_zero())
                    .max(ws.q.amax_or_zero())
                    .max(1e-30);
            let new_rho = (rho * (rp / rd.max(1e-30)).sqrt()).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                rho_v = ws.rho_vec(rho);
                chol = ws.factor(&rho_v, s.sigma)?;
            }
        }
        last = Some((xu, yu, res, iter));
    }
    let (xu, yu, res, iter) = last.expect("at least one residual check runs");
    log::warn!(
        "qp hit the iteration limit ({iter}); residuals {:.2e} / {:.2e}",
        res.prim,
        res.dual
    );
    Ok(ws.assemble(xu, &yu, QpStatus::MaxIter, &res, iter, false))
}

/// Tests whether the dual step `δy` (scaled) certifies primal infeasibility.
fn primal_infeasible(ws: &Workspace<'_>, dy_s: &DVector<f64>, eps: f64) -> bool {
    let dy = ws.unscale_y(dy_s);
    let norm = dy.amax_or_zero();
    if norm < 1e-30 {
        return false;
    }
    let aty = (ws.st.a.transpose() * &dy).amax_or_zero();
    let support: f64 = (0..dy.len())
        .map(|i| ws.st.u[i] * dy[i].max(0.0) + ws.st.l[i] * dy[i].min(0.0))
        .sum();
    aty <= eps * norm && support < -eps * norm
}

/// Adds `weight·‖x_S‖₁` for the variables in `selector`.
///
/// Each selected `x_i` is split as `x_i = s⁺ − s⁻` with `s⁺, s⁻ ≥ 0` and cost
/// `weight·(s⁺ + s⁻)`, which is the epigraph `−s ≤ x_i ≤ s` written with
/// bounds and equalities only. The original variables keep their positions;
/// the slacks are appended as `[s⁺; s⁻]`.
pub fn l1_epigraph(prob: &QpProblem, weight: f64, selector: &[usize]) -> Result<QpProblem> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::InvalidMatrix(format!(
            "l1 weight must be non-negative, got {weight}"
        )));
    }
    let n = prob.n();
    if let Some(&bad) = selector.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!(
            "selector index {bad} out of range for {n} variables"
        )));
    }
    let k = selector.len();
    let nn = n + 2 * k;
    let mut p = DMatrix::zeros(nn, nn);
    p.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    let mut q = DVector::from_element(nn, weight);
    q.rows_mut(0, n).copy_from(&prob.q);
    let me = prob.a_eq.nrows();
    let mut a = DMatrix::zeros(me + k, nn);
    a.view_mut((0, 0), (me, n)).copy_from(&prob.a_eq);
    let mut b = DVector::zeros(me + k);
    b.rows_mut(0, me).copy_from(&prob.b_eq);
    for (j, &i) in selector.iter().enumerate() {
        a[(me + j, i)] = 1.0;
        a[(me + j, n + j)] = -1.0;
        a[(me + j, n + k + j)] = 1.0;
    }
    let mut lower = DVector::zeros(nn);
    let mut upper = DVector::from_element(nn, f64::INFINITY);
    lower.rows_mut(0, n).copy_from(&prob.lower);
    upper.rows_mut(0, n).copy_from(&prob.upper);
    QpProblem::new(p, q)?.with_equalities(a, b)?.with_bounds(lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rank_a_eq: usize,
}

impl ConditionReport {
    pub fn is_convex(&self, tol: f64) -> bool {
        self.lambda_min >= -tol * self.lambda_max.abs().max(1.0)
    }
}

pub fn condition_report(prob: &QpProblem) -> Result<ConditionReport> {
    let (lambda_min, lambda_max) = if prob.n() == 0 {
        (0.0, 0.0)
    } else {
        let eig = linalg::sym_eig(&prob.p)?;
        (eig.min(), eig.max())
    };
    Ok(ConditionReport {
        lambda_min,
        lambda_max,
        rank_a_eq: linalg::numerical_rank(&prob.a_eq, linalg::DEFAULT_RANK_TOL),
    })
}

/// Solution of `[P Aᵀ; A 0][x; ν] = [−q; b]` for equality-only problems.
pub fn kkt_solve(prob: &QpProblem) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (prob.n(), prob.a_eq.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    k.view_mut((n, 0), (m, n)).copy_from(&prob.a_eq);
    k.view_mut((0, n), (n, m)).copy_from(&prob.a_eq.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&prob.q));
    rhs.rows_mut(n, m).copy_from(&prob.b_eq);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidMatrix("KKT matrix is singular".into()))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(p: f64, q: f64) -> QpProblem {
        QpProblem::new(DMatrix::from_element(1, 1, p), DVector::from_element(1, q)).unwrap()
    }

    fn solve_default(prob: &QpProblem) -> QpSolution {
        solve(prob, &QpSettings::default()).unwrap()
    }

    fn random_pd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn random_eq_qp(rng: &mut impl Rng, n: usize, m: usize) -> QpProblem {
        let p = random_pd(rng, n);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        QpProblem::new(p, q).unwrap().with_equalities(a, b).unwrap()
    }

    #[test]
    fn unconstrained_scalar() {
        let sol = solve_default(&scalar(1.0, -1.0));
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 0.5).abs() < 1e-9);
    }

    #[test]
    fn active_lower_bound() {
        let prob = scalar(1.0, 0.0)
            .with_bounds(DVector::from_element(1, 2.0), DVector::from_element(1, f64::INFINITY))
            .unwrap();
        let sol = solve_default(&prob);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        // lower bound active: multiplier is negative and balances Px = 2
        assert!((sol.dual_bounds[0] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn matches_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let prob = random_eq_qp(&mut rng, 10, 3);
            let (x_ref, nu_ref) = kkt_solve(&prob).unwrap();
            let sol = solve_default(&prob);
            assert_eq!(sol.status, QpStatus::Optimal);
            assert!((&sol.x - &x_ref).amax() < 1e-6);
            assert!((&sol.dual_eq - &nu_ref).amax() < 1e-5);
        }
    }

    #[test]
    fn detects_infeasibility() {
        // x = 3 with x ≤ 1
        let prob = scalar(1.0, 0.0)
            .with_equalities(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 3.0))
            .unwrap()
            .with_bounds(
                DVector::from_element(1, f64::NEG_INFINITY),
                DVector::from_element(1, 1.0),
            )
            .unwrap();
        assert_eq!(solve_default(&prob).status, QpStatus::Infeasible);
        // x1 + x2 = 5 with both in [0, 1]
        let prob = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .unwrap()
            .with_equalities(
                DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                DVector::from_element(1, 5.0),
            )
            .unwrap()
            .with_bounds(DVector::zeros(2), DVector::from_element(2, 1.0))
            .unwrap();
        assert_eq!(solve_default(&prob).status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_invalid_data() {
        let prob = scalar(-1.0, 0.0);
        assert!(matches!(
            solve(&prob, &QpSettings::default()),
            Err(Error::InvalidMatrix(_))
        ));
        let prob = scalar(1.0, 0.0)
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, 0.0))
            .unwrap();
        assert!(solve(&prob, &QpSettings::default()).is_err());
        let prob = scalar(1.0, f64::NAN);
        assert!(solve(&prob, &QpSettings::default()).is_err());
    }

    #[test]
    fn soft_threshold() {
        let prob = l1_epigraph(&scalar(1.0, -3.0), 1.0, &[0]).unwrap();
        let sol = solve_default(&prob);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_l1_weight_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prob = random_eq_qp(&mut rng, 5, 2);
        let base = solve_default(&prob);
        let aug = solve_default(&l1_epigraph(&prob, 0.0, &[0, 2, 4]).unwrap());
        assert_eq!(aug.status, QpStatus::Optimal);
        assert!((aug.x.rows(0, 5) - &base.x).amax() < 1e-7);
    }

    #[test]
    fn l1_with_bound() {
        // min |x| s.t. x ≥ 1
        let prob = QpProblem::new(DMatrix::zeros(1, 1), DVector::zeros(1))
            .unwrap()
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, f64::INFINITY))
            .unwrap();
        let sol = solve_default(&l1_epigraph(&prob, 1.0, &[0]).unwrap());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn semidefinite_with_box() {
        // linear objective over a box: min x1 − x2 on [0, 1]²
        let prob = QpProblem::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, -1.0]))
            .unwrap()
            .with_bounds(DVector::zeros(2), DVector::from_element(2, 1.0))
            .unwrap();
        let sol = solve_default(&prob);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0]).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn condition_report_examples() {
        let r = condition_report(&QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap()).unwrap();
        assert_eq!((r.lambda_min, r.lambda_max), (1.0, 1.0));
        let r = condition_report(&QpProblem::new(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap()).unwrap();
        assert_eq!((r.lambda_min, r.lambda_max, r.rank_a_eq), (0.0, 0.0, 0));
    }

    #[test]
    fn solves_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prob = random_eq_qp(&mut rng, 6, 2)
            .with_bounds(DVector::from_element(6, -0.2), DVector::from_element(6, 0.2))
            .unwrap();
        let a = solve_default(&prob);
        let b = solve_default(&prob);
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn boxed_qp(seed: u64) -> QpProblem {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..8);
            let m = rng.random_range(0..n);
            random_eq_qp(&mut rng, n, m)
                .with_bounds(DVector::from_element(n, -0.5), DVector::from_element(n, 0.5))
                .unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn kkt_stationarity_holds(seed in 0u64..10_000) {
                let prob = boxed_qp(seed);
                let sol = solve_default(&prob);
                prop_assume!(sol.status != QpStatus::Infeasible);
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                let scale = 1.0 + prob.q.amax() + prob.p.amax();
                prop_assert!(sol.stationarity(&prob) <= 1e-5 * scale);
                for i in 0..prob.n() {
                    prop_assert!(sol.x[i] >= -0.5 - 1e-7 && sol.x[i] <= 0.5 + 1e-7);
                }
            }

            #[test]
            fn argmin_is_scale_invariant(seed in 0u64..10_000, gamma in 0.01f64..100.0) {
                let prob = boxed_qp(seed);
                let base = solve_default(&prob);
                prop_assume!(base.status == QpStatus::Optimal);
                let mut scaled = prob.clone();
                scaled.p *= gamma;
                scaled.q *= gamma;
                let sol = solve_default(&scaled);
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                prop_assert!((&sol.x - &base.x).amax() <= 1e-6);
            }
        }
    }
}
