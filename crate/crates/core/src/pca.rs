//! Principal-components pre-estimation used to start the EM iterations.
//!
//! Loadings are `V M^{1/2}` and factors `M^{-1/2} V' x_t`, where `(M, V)` are the
//! leading eigenpairs of the sample covariance. Eigenvector signs are fixed so
//! that the first nonzero entry of each column is positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};
use crate::linalg::{self, checked_sym_inverse, sym_eigen_desc};
use crate::panel::{DfmParams, IdioCov, Panel};

/// Relative gap below which two adjacent leading eigenvalues count as tied.
pub const EIGEN_TIE_TOL: f64 = 1e-12;

const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcOptions {
    /// Remove per-series means before the eigendecomposition.
    pub center: bool,
}

impl Default for PcOptions {
    fn default() -> Self {
        Self { center: true }
    }
}

#[derive(Debug, Clone)]
pub struct PcEstimate {
    pub loadings: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub transition: DMatrix<f64>,
    pub shock_loading: DMatrix<f64>,
    pub idio_var: DVector<f64>,
    /// The `r` leading eigenvalues of the sample covariance, decreasing.
    pub eigvals: DVector<f64>,
    /// Means removed before estimation (zeros when centering is off).
    pub means: DVector<f64>,
}

impl PcEstimate {
    /// `Λ^(0) F̃`, in the centered units of the estimation.
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.loadings * &self.factors
    }

    /// Parameters with diagonal idiosyncratic covariance. Zero residual variances
    /// are floored at `floor` so that the result can drive a filter.
    pub fn to_params(&self, floor: f64) -> Result<DfmParams> {
        let idio = self.idio_var.map(|v| v.max(floor));
        DfmParams::new(
            self.loadings.clone(),
            self.transition.clone(),
            self.shock_loading.clone(),
            IdioCov::Diagonal(idio),
        )
    }
}

/// VAR(1) fit on a factor path.
#[derive(Debug, Clone)]
pub struct VarFit {
    pub transition: DMatrix<f64>,
    pub shock_loading: DMatrix<f64>,
    /// Residual covariance with divisor `T - 1`.
    pub resid_cov: DMatrix<f64>,
}

pub fn pc_estimate(panel: &Panel, r: usize, q: usize) -> Result<PcEstimate> {
    pc_estimate_with(panel, r, q, PcOptions::default())
}

pub fn pc_estimate_with(panel: &Panel, r: usize, q: usize, options: PcOptions) -> Result<PcEstimate> {
    let n = panel.n();
    let t_len = panel.len();
    if r == 0 || q == 0 || q > r {
        return Err(DfmError::InvalidConfig(format!("need 1 <= q <= r, got r = {r}, q = {q}")));
    }
    if r >= n {
        return Err(DfmError::InvalidConfig(format!("r = {r} must be smaller than n = {n}")));
    }
    if t_len < r + 2 {
        return Err(DfmError::InvalidConfig(format!(
            "T = {t_len} is too short for r = {r} factors (need T >= r + 2)"
        )));
    }

    let (x, means) = if options.center {
        let (p, m) = panel.demeaned();
        (p.into_inner(), m)
    } else {
        (panel.data().clone(), DVector::zeros(n))
    };

    let (vals, mut vecs) = leading_eigenpairs(&x, r)?;
    linalg::fix_column_signs(&mut vecs, SIGN_TOL);
    let eigvals = DVector::from_iterator(r, vals.iter().take(r).cloned());
    if eigvals[r - 1] <= 0.0 {
        return Err(DfmError::Singular(format!(
            "sample covariance has rank below r = {r}"
        )));
    }

    let sqrt_m = eigvals.map(f64::sqrt);
    let loadings = &vecs * DMatrix::from_diagonal(&sqrt_m);
    let factors = DMatrix::from_diagonal(&sqrt_m.map(|v| 1.0 / v)) * vecs.transpose() * &x;

    let resid = &x - &loadings * &factors;
    let idio_var = DVector::from_iterator(
        n,
        resid.row_iter().map(|row| row.norm_squared() / t_len as f64),
    );

    let var = var_from_factors(&factors, q)?;
    Ok(PcEstimate {
        loadings,
        factors,
        transition: var.transition,
        shock_loading: var.shock_loading,
        idio_var,
        eigvals,
        means,
    })
}

/// Leading `r + 1` (or fewer, if unavailable) eigenvalues and the first `r`
/// unit eigenvectors of `x x' / T`, computed on the smaller of the two Gram matrices.
fn leading_eigenpairs(x: &DMatrix<f64>, r: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, t_len) = x.shape();
    let tf = t_len as f64;
    let (vals, vecs) = if n <= t_len {
        let cov = x * x.transpose() / tf;
        let (vals, vecs) = sym_eigen_desc(&cov);
        (vals, vecs.columns(0, r).into_owned())
    } else {
        let gram = x.transpose() * x / tf;
        let (vals, u) = sym_eigen_desc(&gram);
        let mut vecs = DMatrix::zeros(n, r);
        for j in 0..r {
            let mut v = x * u.column(j);
            let norm = v.norm();
            if norm > 0.0 {
                v /= norm;
            }
            vecs.set_column(j, &v);
        }
        (vals, vecs)
    };
    let keep = (r + 1).min(vals.len());
    let vals: Vec<f64> = vals.iter().take(keep).cloned().collect();
    let top = vals[0].abs().max(f64::MIN_POSITIVE);
    for j in 0..keep.saturating_sub(1).min(r) {
        if vals[j] > 0.0 && (vals[j] - vals[j + 1]).abs() <= EIGEN_TIE_TOL * top {
            return Err(DfmError::EigenTie {
                position: j + 1,
                upper: vals[j],
                lower: vals[j + 1],
            });
        }
    }
    Ok((vals, vecs))
}

/// Least-squares VAR(1) on `f` (`r x T`) and the rank-`q` shock loading from
/// the leading eigenpairs of the residual covariance.
pub fn var_from_factors(f: &DMatrix<f64>, q: usize) -> Result<VarFit> {
    let (r, t_len) = f.shape();
    if t_len < 2 {
        return Err(DfmError::InvalidConfig("VAR fit needs at least two periods".into()));
    }
    if q == 0 || q > r {
        return Err(DfmError::InvalidConfig(format!("need 1 <= q <= r, got r = {r}, q = {q}")));
    }
    let curr = f.columns(1, t_len - 1);
    let prev = f.columns(0, t_len - 1);
    let lag = curr * prev.transpose();
    let prev_mom = prev * prev.transpose();
    let inv = checked_sym_inverse(&prev_mom, 1e-12, "lagged factor second moment")?;
    let transition = lag * inv;
    let resid = curr - &transition * prev;
    let resid_cov = linalg::symmetrize(&(&resid * resid.transpose() / (t_len - 1) as f64));
    let shock_loading = top_q_loading(&resid_cov, q, 0.0);
    Ok(VarFit {
        transition,
        shock_loading,
        resid_cov,
    })
}

/// `W (M - shift)^{1/2}` from the top-`q` eigenpairs of `cov`, sign-fixed.
/// Eigenvalues below `shift` produce zero columns.
pub(crate) fn top_q_loading(cov: &DMatrix<f64>, q: usize, shift: f64) -> DMatrix<f64> {
    let (vals, mut vecs) = sym_eigen_desc(cov);
    linalg::fix_column_signs(&mut vecs, SIGN_TOL);
    let mut h = vecs.columns(0, q).into_owned();
    for j in 0..q {
        let scale = (vals[j] - shift).max(0.0).sqrt();
        h.column_mut(j).scale_mut(scale);
    }
    h
}
