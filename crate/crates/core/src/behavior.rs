//! Gaussian behaviors: length-`L` trajectory windows modeled as
//! `w ~ N(μ^w, Σ^w)`.
//!
//! Covers estimation from a data matrix, Gaussian conditioning, extraction of
//! the affine predictive model `μ̂_pred = M_u u_f + M_ini w_ini`, the forward
//! map from a stochastic state-space model, KL divergence between Gaussians,
//! log-likelihood and seeded sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::plant::{self, StochasticLtiModel};
use crate::trajectory::{DataMatrix, SignalDims};

/// Row ordering of a stacked window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// `[w_0; w_1; …]` with `w_t = [u_t; y_t]`.
    Interleaved,
    /// `[u_0; …; u_{L−1}; y_0; …; y_{L−1}]`.
    InputOutputStacked,
}

/// Position in the input/output-stacked ordering of every interleaved row.
pub fn stacked_index(dims: SignalDims, l: usize) -> Vec<usize> {
    let (m, q) = (dims.m, dims.q());
    (0..q * l)
        .map(|r| {
            let (t, c) = (r / q, r % q);
            if c < dims.m {
                t * m + c
            } else {
                m * l + t * dims.p + (c - m)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBehavior {
    pub dims: SignalDims,
    pub l: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ordering: Ordering,
}

/// Gaussian over a subset of window coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBehavior {
    pub fn new(dims: SignalDims, l: usize, mean: DVector<f64>, cov: DMatrix<f64>, ordering: Ordering) -> Result<Self> {
        let k = dims.q() * l;
        if mean.len() != k || cov.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "behavior of q·L = {k} has mean of length {} and {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        linalg::check_finite(&cov, "covariance")?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("mean has non-finite entries".into()));
        }
        let cov = linalg::symmetrize(&cov);
        if !linalg::is_psd(&cov, 1e-8) {
            return Err(Error::InvalidMatrix("covariance is not positive semidefinite".into()));
        }
        Ok(Self {
            dims,
            l,
            mean,
            cov,
            ordering,
        })
    }

    pub fn size(&self) -> usize {
        self.mean.len()
    }

    /// Sample second moment `W Wᵀ / D` (zero mean), or the centered sample
    /// covariance with the column mean when `subtract_mean` is set.
    pub fn estimate(w: &DataMatrix, subtract_mean: bool) -> Self {
        let d = w.cols() as f64;
        let data = w.w();
        let (mean, cov) = if subtract_mean {
            let mean = data.column_mean();
            let mut centered = data.clone();
            for mut col in centered.column_iter_mut() {
                col -= &mean;
            }
            let cov = &centered * centered.transpose() / d;
            (mean, cov)
        } else {
            (DVector::zeros(data.nrows()), data * data.transpose() / d)
        };
        Self {
            dims: w.dims(),
            l: w.l(),
            mean,
            cov: linalg::symmetrize(&cov),
            ordering: Ordering::Interleaved,
        }
    }

    /// Same behavior with rows permuted into the interleaved ordering.
    pub fn to_interleaved(&self) -> Self {
        match self.ordering {
            Ordering::Interleaved => self.clone(),
            Ordering::InputOutputStacked => {
                let idx = stacked_index(self.dims, self.l);
                let k = idx.len();
                Self {
                    dims: self.dims,
                    l: self.l,
                    mean: DVector::from_fn(k, |r, _| self.mean[idx[r]]),
                    cov: DMatrix::from_fn(k, k, |r, c| self.cov[(idx[r], idx[c])]),
                    ordering: Ordering::Interleaved,
                }
            }
        }
    }

    /// Total log-density `Σᵢ log N(wⁱ; μ, Σ)` of the columns of `samples`.
    ///
    /// With `jitter` a singular covariance is regularized by `δ·I`,
    /// `δ = 1e-9·tr(Σ)/k`, before evaluation.
    pub fn log_likelihood(&self, samples: &DMatrix<f64>, jitter: bool) -> Result<f64> {
        let k = self.size();
        if samples.nrows() != k {
            return Err(Error::Shape(format!(
                "samples have {} rows, behavior has {k}",
                samples.nrows()
            )));
        }
        let cov = if jitter {
            linalg::jitter_if_needed(&self.cov).0
        } else {
            self.cov.clone()
        };
        let g = linalg::chol_psd(&cov, 0.0)?;
        let log_det: f64 = 2.0 * g.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut centered = samples.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let z = g
            .solve_lower_triangular(&centered)
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let n = samples.ncols() as f64;
        let quad: f64 = z.iter().map(|v| v * v).sum();
        Ok(-0.5 * n * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det) - 0.5 * quad)
    }

    /// Conditional distribution of the complement of `free_index` given the
    /// free coordinates, using a pseudoinverse of `Σ^ff`.
    pub fn condition(&self, free_index: &[usize], free_value: &DVector<f64>) -> Result<ConditionalGaussian> {
        self.condition_with_tol(free_index, free_value, DEFAULT_RANK_TOL)
    }

    pub fn condition_with_tol(
        &self,
        free_index: &[usize],
        free_value: &DVector<f64>,
        rank_tol: f64,
    ) -> Result<ConditionalGaussian> {
        let k = self.size();
        if free_index.len() != free_value.len() {
            return Err(Error::Shape(format!(
                "{} free indices but {} free values",
                free_index.len(),
                free_value.len()
            )));
        }
        let mut is_free = vec![false; k];
        for &i in free_index {
            if i >= k {
                return Err(Error::Shape(format!("free index {i} out of range 0..{k}")));
            }
            if is_free[i] {
                return Err(Error::Shape(format!("free index {i} repeated")));
            }
            is_free[i] = true;
        }
        let dep: Vec<usize> = (0..k).filter(|&i| !is_free[i]).collect();
        let s_ff = self.cov.select_rows(free_index).select_columns(free_index);
        let s_df = self.cov.select_rows(&dep).select_columns(free_index);
        let s_dd = self.cov.select_rows(&dep).select_columns(&dep);
        let mu_f = self.mean.select_rows(free_index);
        let mu_d = self.mean.select_rows(&dep);
        let gain = &s_df * linalg::pinv(&s_ff, rank_tol)?;
        let mean = mu_d + &gain * (free_value - mu_f);
        let cov = linalg::symmetrize(&(s_dd - &gain * s_df.transpose()));
        Ok(ConditionalGaussian { mean, cov })
    }

    /// `n` i.i.d. draws as columns. Negative eigenvalues of the covariance are
    /// clamped to zero.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
        let factor = linalg::psd_factor(&self.cov)?;
        let k = self.size();
        let z = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mut out = factor * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// Window distribution induced by a stochastic state-space model with
    /// `x_t ~ N(μ^x, Σ^x)` independent of `u ~ N(μ^u, Σ^u)`; returned in
    /// input/output-stacked ordering.
    pub fn from_state_space(
        model: &StochasticLtiModel,
        l: usize,
        sigma_x: &DMatrix<f64>,
        mu_x: &DVector<f64>,
        sigma_u: &DMatrix<f64>,
        mu_u: &DVector<f64>,
    ) -> Result<Self> {
        let (n, m, p) = (model.n(), model.m(), model.p());
        if sigma_x.shape() != (n, n) || mu_x.len() != n {
            return Err(Error::Shape(format!("state moments must be of dimension {n}")));
        }
        if sigma_u.shape() != (m * l, m * l) || mu_u.len() != m * l {
            return Err(Error::Shape(format!(
                "input moments must be of dimension mL = {}",
                m * l
            )));
        }
        let ops = plant::build_block_operators(model, l)?;
        let xi_blk = linalg::block_diag_repeat(&model.sigma_xi, l);
        let eta_blk = linalg::block_diag_repeat(&model.sigma_eta, l);
        let cross = &ops.t_u * sigma_u;
        let yy = &ops.obs * sigma_x * ops.obs.transpose()
            + &cross * ops.t_u.transpose()
            + &ops.t_xi * xi_blk * ops.t_xi.transpose()
            + eta_blk;
        let (mu, pl) = (m * l, p * l);
        let mut cov = DMatrix::zeros(mu + pl, mu + pl);
        cov.view_mut((0, 0), (mu, mu)).copy_from(sigma_u);
        cov.view_mut((mu, 0), (pl, mu)).copy_from(&cross);
        cov.view_mut((0, mu), (mu, pl)).copy_from(&cross.transpose());
        cov.view_mut((mu, mu), (pl, pl)).copy_from(&yy);
        let mut mean = DVector::zeros(mu + pl);
        mean.rows_mut(0, mu).copy_from(mu_u);
        mean.rows_mut(mu, pl).copy_from(&(&ops.obs * mu_x + &ops.t_u * mu_u));
        Self::new(model.dims(), l, mean, cov, Ordering::InputOutputStacked)
    }
}

/// JSON document for caching identified behaviors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct BehaviorJson {
    pub dims: SignalDims,
    #[serde(rename = "L")]
    pub l: usize,
    pub mean: Vec<f64>,
    /// Row-major rows of the covariance.
    pub cov: Vec<Vec<f64>>,
    pub ordering: Ordering,
}

impl GaussianBehavior {
    pub fn to_json(&self) -> String {
        let doc = BehaviorJson {
            dims: self.dims,
            l: self.l,
            mean: self.mean.iter().copied().collect(),
            cov: plant::matrix_to_rows(&self.cov),
            ordering: self.ordering,
        };
        serde_json::to_string_pretty(&doc).expect("behavior serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BehaviorJson = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let cov = plant::rows_to_matrix(&doc.cov, doc.mean.len(), "cov")?;
        Self::new(doc.dims, doc.l, DVector::from_vec(doc.mean), cov, doc.ordering)
    }
}

/// `D_KL(N(μ₁, Σ₁) ‖ N(μ₂, Σ₂))`, jittering singular covariances.
pub fn kl_divergence(p: &ConditionalGaussian, q: &ConditionalGaussian) -> Result<f64> {
    let k = p.mean.len();
    if q.mean.len() != k || p.cov.shape() != (k, k) || q.cov.shape() != (k, k) {
        return Err(Error::Shape("KL arguments have different dimensions".into()));
    }
    let (s1, _) = linalg::jitter_if_needed(&p.cov);
    let (s2, _) = linalg::jitter_if_needed(&q.cov);
    let g1 = linalg::chol_psd(&s1, 0.0)?;
    let g2 = linalg::chol_psd(&s2, 0.0)?;
    let logdet = |g: &DMatrix<f64>| 2.0 * g.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // tr(Σ₂⁻¹Σ₁) = ‖G₂⁻¹G₁‖_F²
    let a = g2
        .solve_lower_triangular(&g1)
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    let diff = &p.mean - &q.mean;
    let z = g2
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    let kl = 0.5 * (a.norm_squared() - k as f64 + z.norm_squared() + logdet(&g2) - logdet(&g1));
    Ok(kl.max(0.0))
}

/// Affine predictor `μ̂_pred = M_u u_f + M_ini w_ini` with covariance `Σ̂_pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveModel {
    pub dims: SignalDims,
    pub l_ini: usize,
    pub l_f: usize,
    /// Number of data columns the model was estimated from.
    pub samples: usize,
    pub m_u: DMatrix<f64>,
    pub m_ini: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl PredictiveModel {
    /// Subspace predictor `Y_f [W_p; U_f]†` and the projector covariance
    /// `Y_f (I − Z†Z) Y_fᵀ / D` with `Z = [W_p; U_f]`.
    pub fn estimate(w: &DataMatrix, rank_tol: f64) -> Result<Self> {
        let z = w.free();
        let y = w.y_f();
        let d = w.cols() as f64;
        let gain = &y * linalg::pinv(&z, rank_tol)?;
        let cov = (&y * y.transpose() - &gain * (&z * y.transpose())) / d;
        let n_ini = w.dims().q() * w.l_ini();
        Ok(Self {
            dims: w.dims(),
            l_ini: w.l_ini(),
            l_f: w.l_f(),
            samples: w.cols(),
            m_ini: gain.columns(0, n_ini).into_owned(),
            m_u: gain.columns(n_ini, gain.ncols() - n_ini).into_owned(),
            cov: linalg::symmetrize(&cov),
        })
    }

    /// Predictive model obtained by conditioning a behavior on `(w_ini, u_f)`.
    pub fn from_behavior(gb: &GaussianBehavior, l_ini: usize, rank_tol: f64, samples: usize) -> Result<Self> {
        if l_ini >= gb.l {
            return Err(Error::Shape(format!(
                "L_ini = {l_ini} leaves no future in L = {}",
                gb.l
            )));
        }
        let gb = gb.to_interleaved();
        let l_f = gb.l - l_ini;
        // reuse the data-matrix row partition on a dummy column
        let dm = DataMatrix::assemble(gb.dims, DMatrix::zeros(gb.size(), 1), l_ini, l_f)?;
        let free = dm.free_rows();
        let dep = dm.dep_rows();
        let s_ff = gb.cov.select_rows(free).select_columns(free);
        let s_df = gb.cov.select_rows(dep).select_columns(free);
        let s_dd = gb.cov.select_rows(dep).select_columns(dep);
        let gain = &s_df * linalg::pinv(&s_ff, rank_tol)?;
        let cov = s_dd - &gain * s_df.transpose();
        let n_ini = gb.dims.q() * l_ini;
        Ok(Self {
            dims: gb.dims,
            l_ini,
            l_f,
            samples,
            m_ini: gain.columns(0, n_ini).into_owned(),
            m_u: gain.columns(n_ini, gain.ncols() - n_ini).into_owned(),
            cov: linalg::symmetrize(&cov),
        })
    }

    pub fn mean(&self, u_f: &DVector<f64>, w_ini: &DVector<f64>) -> DVector<f64> {
        &self.m_u * u_f + &self.m_ini * w_ini
    }

    pub fn predict(&self, u_f: &DVector<f64>, w_ini: &DVector<f64>) -> ConditionalGaussian {
        ConditionalGaussian {
            mean: self.mean(u_f, w_ini),
            cov: self.cov.clone(),
        }
    }

    pub fn check_inputs(&self, w_ini: &DVector<f64>) -> Result<()> {
        if w_ini.len() != self.m_ini.ncols() {
            return Err(Error::Shape(format!(
                "w_ini has length {}, expected {}",
                w_ini.len(),
                self.m_ini.ncols()
            )));
        }
        Ok(())
    }
}
