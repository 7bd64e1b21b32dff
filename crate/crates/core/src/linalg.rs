//! Dense linear-algebra building blocks shared by every other module.
//!
//! All routines are pure functions over `nalgebra` matrices. Symmetric inputs
//! are symmetrized as `(S + Sᵀ)/2` before any decomposition.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Default relative singular-value threshold used for pseudoinverses and ranks.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Pivots below this fraction of the largest diagonal entry are treated as zero
/// by [`chol_psd`].
const CHOL_PIVOT_TOL: f64 = 1e-13;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored column-wise, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        self.eigenvalues.get(0).copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().last().unwrap_or(0.0)
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * f(self.eigenvalues[j]));
        &scaled * v.transpose()
    }
}

pub fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
    }
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

fn require_square(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Thin SVD with a reconstruction check.
///
/// nalgebra's bidiagonal iteration occasionally returns a wrong factorization
/// for exactly rank-deficient inputs. When the reconstruction is off, the
/// decomposition is rebuilt from the symmetric eigenproblem of
/// `[[0, A], [Aᵀ, 0]]`, whose eigenvalues are `±σ_i`.
pub fn svd(a: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let norm = a.norm();
    let first = a.clone().svd(true, true);
    let good = first
        .clone()
        .recompose()
        .map(|r| (r - a).norm() <= 1e-11 * norm.max(f64::MIN_POSITIVE))
        .unwrap_or(false);
    if good {
        first
    } else {
        log::debug!(
            "svd of {}x{} matrix failed its reconstruction check, using eigen fallback",
            a.nrows(),
            a.ncols()
        );
        svd_via_eigen(a)
    }
}

fn svd_via_eigen(a: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let (m, n) = a.shape();
    let k = m.min(n);
    let mut j = DMatrix::zeros(m + n, m + n);
    j.view_mut((0, m), (m, n)).copy_from(a);
    j.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let eig = SymmetricEigen::new(j);
    let mut idx: Vec<usize> = (0..m + n).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let scale = std::f64::consts::SQRT_2;
    let mut u = DMatrix::zeros(m, k);
    let mut v_t = DMatrix::zeros(k, n);
    let mut sv = DVector::zeros(k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        sv[c] = eig.eigenvalues[i].max(0.0);
        let vec = eig.eigenvectors.column(i);
        u.column_mut(c).copy_from(&(vec.rows(0, m) * scale));
        v_t.row_mut(c).copy_from(&(vec.rows(m, n) * scale).transpose());
    }
    SVD {
        u: Some(u),
        v_t: Some(v_t),
        singular_values: sv,
    }
}

/// Moore–Penrose pseudoinverse together with the numerical rank.
///
/// Singular values below `rank_tol * σ_max` are truncated to zero.
pub fn pinv_with_rank(a: &DMatrix<f64>, rank_tol: f64) -> Result<(DMatrix<f64>, usize)> {
    check_finite(a, "pinv input")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok((DMatrix::zeros(n, m), 0));
    }
    let svd = svd(a);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Ok((DMatrix::zeros(n, m), 0));
    }
    let cutoff = rank_tol * sigma_max;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut out = DMatrix::zeros(n, m);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            // out += v_k * u_kᵀ / s
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    Ok((out, rank))
}

/// Moore–Penrose pseudoinverse with relative rank truncation.
pub fn pinv(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    pinv_with_rank(a, rank_tol).map(|(p, _)| p)
}

/// Numerical rank: number of singular values above `rank_tol * σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rank_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = svd(a).singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 || !sigma_max.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * sigma_max).count()
}

pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig> {
    require_square(s, "sym_eig input")?;
    check_finite(s, "sym_eig input")?;
    let n = s.nrows();
    let eig = SymmetricEigen::new(symmetrize(s));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Lower-triangular `G` with `G Gᵀ = S + shift·I`.
///
/// Fails with the index of the first non-positive pivot when `S + shift·I` is
/// not positive definite.
pub fn chol_psd(s: &DMatrix<f64>, shift: f64) -> Result<DMatrix<f64>> {
    require_square(s, "chol_psd input")?;
    check_finite(s, "chol_psd input")?;
    let n = s.nrows();
    let mut a = symmetrize(s);
    for i in 0..n {
        a[(i, i)] += shift;
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = CHOL_PIVOT_TOL * scale;
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= g[(j, k)] * g[(j, k)];
        }
        if !(d > floor) || d <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let djj = d.sqrt();
        g[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = v / djj;
        }
    }
    Ok(g)
}

/// True iff `λ_min(S) ≥ −tol · max(1, |λ_max|)`.
pub fn is_psd(s: &DMatrix<f64>, tol: f64) -> bool {
    match sym_eig(s) {
        Ok(eig) => eig.min() >= -tol * eig.max().abs().max(1.0),
        Err(_) => false,
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves the discrete Lyapunov equation `Σ = A Σ Aᵀ + Qc` by squared
/// (Smith) doubling.
pub fn lyap_discrete(a: &DMatrix<f64>, qc: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(a, "A")?;
    check_finite(a, "A")?;
    check_finite(qc, "Qc")?;
    if qc.shape() != a.shape() {
        return Err(Error::Shape(format!(
            "Qc is {}x{} but A is {}x{}",
            qc.nrows(),
            qc.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 - 1e-9 {
        return Err(Error::UnstableSystem { spectral_radius: rho });
    }
    let mut x = symmetrize(qc);
    let mut ak = a.clone();
    for _ in 0..200 {
        let inc = &ak * &x * ak.transpose();
        x += &inc;
        ak = &ak * &ak;
        if inc.norm() <= f64::EPSILON * x.norm() || ak.norm() < 1e-300 {
            break;
        }
    }
    // One fixed-point sweep cleans up the accumulated rounding.
    let x = a * &x * a.transpose() + qc;
    Ok(symmetrize(&x))
}

/// Square-root factor `F` with `F Fᵀ = S`, clamping negative eigenvalues to
/// zero. Works for singular covariances.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    let v = &eig.eigenvectors;
    Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        v[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
    }))
}

/// Block-diagonal matrix with `count` copies of `block`.
pub fn block_diag_repeat(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Adds `δ·I` with `δ = 1e-9·tr(Σ)/k` when `Σ` is not positive definite.
///
/// Returns the (possibly jittered) matrix and the applied shift.
pub fn jitter_if_needed(s: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let s = symmetrize(s);
    if chol_psd(&s, 0.0).is_ok() {
        return (s, 0.0);
    }
    let k = s.nrows().max(1) as f64;
    let delta = 1e-9 * s.trace().abs() / k;
    if delta > 0.0 {
        log::warn!("covariance is singular; adding jitter {delta:.3e} to the diagonal");
    }
    let mut out = s;
    for i in 0..out.nrows() {
        out[(i, i)] += delta;
    }
    (out, delta)
}
