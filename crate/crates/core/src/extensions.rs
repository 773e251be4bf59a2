//! Relaxations of the exact diagonal model: a ridge-penalised full
//! idiosyncratic covariance, and AR(1) idiosyncratic components handled by
//! an ECM step with GLS loadings.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::em::{idio_floor, run_em, EmConfig, EmResult, IdioModel, SufficientStats};
use crate::error::{DfmError, Result};
use crate::kalman::SmootherOutput;
use crate::linalg::{self, symmetrize};
use crate::panel::{DfmParams, IdioCov, ModelDims, Panel};
use crate::pca::PcEstimate;

/// Largest admissible `|ρ_i|`; estimates beyond it are clamped.
pub const RHO_CLAMP: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgePolicy {
    Fixed(f64),
    /// `μ = c n² / T`, or zero when `n² / T < 1`.
    Auto { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub policy: RidgePolicy,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            policy: RidgePolicy::Auto { c: 1.0 },
        }
    }
}

impl RidgeConfig {
    pub fn fixed(mu: f64) -> Self {
        Self {
            policy: RidgePolicy::Fixed(mu),
        }
    }

    pub fn resolve(&self, n: usize, t: usize) -> f64 {
        match self.policy {
            RidgePolicy::Fixed(mu) => mu,
            RidgePolicy::Auto { c } => {
                let ratio = (n * n) as f64 / t as f64;
                if ratio < 1.0 {
                    0.0
                } else {
                    c * ratio
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match self.policy {
            RidgePolicy::Fixed(mu) => !(mu >= 0.0 && mu.is_finite()),
            RidgePolicy::Auto { c } => !(c >= 0.0 && c.is_finite()),
        };
        if bad {
            return Err(DfmError::InvalidConfig("ridge penalty must be non-negative".into()));
        }
        Ok(())
    }
}

/// `argmax_Γ  -log det Γ - tr(Γ⁻¹S) - μ tr(Γ⁻¹)`: same eigenvectors as `S`,
/// eigenvalues `ν ↦ (ν + sqrt(ν² + 4μ)) / 2`.
pub fn ridge_covariance(s: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(DfmError::Shape(format!("covariance must be square, got {:?}", s.shape())));
    }
    if !(mu >= 0.0) {
        return Err(DfmError::InvalidConfig(format!("ridge penalty must be non-negative, got {mu}")));
    }
    let asym = linalg::max_abs_diff(s, &s.transpose());
    if asym > 1e-10 * s.amax().max(1.0) {
        return Err(DfmError::InvalidParams(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if mu == 0.0 {
        return Ok(s.clone());
    }
    let (vals, vecs) = linalg::sym_eigen_desc(s);
    let mapped = vals.map(|v| 0.5 * (v + (v * v + 4.0 * mu).sqrt()));
    Ok(symmetrize(&(&vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose())))
}

/// `T⁻¹ [X X' - Λ S_xF' - S_xF Λ' + Λ S_FF Λ']`.
pub fn residual_covariance(stats: &SufficientStats, panel: &Panel, loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let x = panel.data();
    let cross = loadings * stats.s_xf.transpose();
    let s = x * x.transpose() - &cross - cross.transpose() + loadings * &stats.s_ff * loadings.transpose();
    symmetrize(&(s / stats.t_len as f64))
}

/// AR(1) idiosyncratic coefficients and innovation variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ArIdioState {
    pub rho: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl ArIdioState {
    pub fn white_noise(gamma: &DVector<f64>) -> Self {
        let floor = gamma.iter().cloned().fold(0.0, f64::max).max(1.0) * 1e-8;
        Self {
            rho: DVector::zeros(gamma.len()),
            gamma: gamma.map(|g| g.max(floor)),
        }
    }

    /// Marginal variances `γ_i / (1 - ρ_i²)`.
    pub fn marginal_var(&self) -> DVector<f64> {
        self.gamma.zip_map(&self.rho, |g, p| g / (1.0 - p * p))
    }

    /// Parameters handed to the filter: the idiosyncratic AR structure is
    /// collapsed to its marginal variance.
    pub fn filter_params(&self, params: &DfmParams) -> DfmParams {
        let mut p = params.clone();
        p.idio_cov = IdioCov::Diagonal(self.marginal_var());
        p.idio_ar = DVector::zeros(p.n());
        p
    }
}

/// Precision matrix of a stationary AR(1) of length `t_len` with coefficient
/// `rho` and innovation variance `gamma`: `γ⁻¹` times the tridiagonal with
/// diagonal `1, 1+ρ², …, 1+ρ², 1` and off-diagonal `-ρ`.
pub fn ar1_precision(rho: f64, gamma: f64, t_len: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t_len, t_len);
    for t in 0..t_len {
        m[(t, t)] = if t == 0 || t + 1 == t_len { 1.0 } else { 1.0 + rho * rho };
        if t + 1 < t_len {
            m[(t, t + 1)] = -rho;
            m[(t + 1, t)] = -rho;
        }
    }
    m / gamma
}

/// Lagged panel moments shared by the AR and GLS updates.
struct LagMoments {
    /// `Σ_{t≥2} x_t F_{t-1|T}'`.
    xf_lead: DMatrix<f64>,
    /// `Σ_{t≥2} x_{t-1} F_{t|T}'`.
    xf_lagx: DMatrix<f64>,
    /// `Σ_{t≥2} x_t F_{t|T}'`.
    xf_tail: DMatrix<f64>,
    /// `Σ_{t≤T-1} x_t F_{t|T}'`.
    xf_head: DMatrix<f64>,
    xx_lag: DVector<f64>,
    xx_tail: DVector<f64>,
    xx_head: DVector<f64>,
    /// `E[F_1F_1'] + E[F_TF_T']`.
    ends: DMatrix<f64>,
    /// `x_1 F_{1|T}' + x_T F_{T|T}'`.
    xf_ends: DMatrix<f64>,
}

fn lag_moments(panel: &Panel, smoother: &SmootherOutput) -> LagMoments {
    let x = panel.data();
    let f = &smoother.f_smooth;
    let t_len = x.ncols();
    let m = t_len - 1;
    let x_curr = x.columns(1, m);
    let x_prev = x.columns(0, m);
    let f_curr = f.columns(1, m);
    let f_prev = f.columns(0, m);
    let row_dot = |a: &nalgebra::DMatrixView<f64>, b: &nalgebra::DMatrixView<f64>| {
        DVector::from_iterator(a.nrows(), a.row_iter().zip(b.row_iter()).map(|(u, v)| u.dot(&v)))
    };
    let e = |k: usize| f.column(k) * f.column(k).transpose() + &smoother.p_smooth[k];
    LagMoments {
        xf_lead: x_curr * f_prev.transpose(),
        xf_lagx: x_prev * f_curr.transpose(),
        xf_tail: x_curr * f_curr.transpose(),
        xf_head: x_prev * f_prev.transpose(),
        xx_lag: row_dot(&x_curr, &x_prev),
        xx_tail: row_dot(&x_curr, &x_curr),
        xx_head: row_dot(&x_prev, &x_prev),
        ends: e(0) + e(t_len - 1),
        xf_ends: x.column(0) * f.column(0).transpose() + x.column(t_len - 1) * f.column(t_len - 1).transpose(),
    }
}

/// AR(1) coefficients and innovation variances of `x_i - λ_i'F_t`, using the
/// conditional second moments of the factors.
pub fn ar_update(
    stats: &SufficientStats,
    panel: &Panel,
    smoother: &SmootherOutput,
    loadings: &DMatrix<f64>,
) -> Result<ArIdioState> {
    if stats.t_len < 2 {
        return Err(DfmError::InvalidConfig("the AR update needs T >= 2".into()));
    }
    let lm = lag_moments(panel, smoother);
    Ok(ar_from_moments(stats, &lm, loadings))
}

fn ar_from_moments(stats: &SufficientStats, lm: &LagMoments, loadings: &DMatrix<f64>) -> ArIdioState {
    let n = loadings.nrows();
    let m = (stats.t_len - 1) as f64;
    let mut rho = DVector::zeros(n);
    let mut gamma = DVector::zeros(n);
    let mut clamped = 0usize;
    for i in 0..n {
        let l = loadings.row(i).transpose();
        let quad = |s: &DMatrix<f64>| (l.transpose() * s * &l)[(0, 0)];
        let cross = lm.xx_lag[i] - l.dot(&lm.xf_lead.row(i).transpose()) - l.dot(&lm.xf_lagx.row(i).transpose())
            + quad(&stats.s_ff_lag);
        let prev = lm.xx_head[i] - 2.0 * l.dot(&lm.xf_head.row(i).transpose()) + quad(&stats.s_ff_prev);
        let curr = lm.xx_tail[i] - 2.0 * l.dot(&lm.xf_tail.row(i).transpose()) + quad(&stats.s_ff_curr);
        let mut p = if prev > 0.0 { cross / prev } else { 0.0 };
        if p.abs() > RHO_CLAMP {
            clamped += 1;
            p = p.signum() * RHO_CLAMP;
        }
        let g = (curr - 2.0 * p * cross + p * p * prev) / m;
        rho[i] = p;
        gamma[i] = g.max(idio_floor(stats.s_xx[i] / stats.t_len as f64));
    }
    if clamped > 0 {
        warn!("{clamped} idiosyncratic AR coefficients clamped to +/-{RHO_CLAMP}");
    }
    ArIdioState { rho, gamma }
}

/// GLS loadings under AR(1) idiosyncratic weighting.
pub fn gls_loadings(
    stats: &SufficientStats,
    panel: &Panel,
    smoother: &SmootherOutput,
    state: &ArIdioState,
) -> Result<DMatrix<f64>> {
    let lm = lag_moments(panel, smoother);
    gls_from_moments(stats, &lm, state)
}

fn gls_from_moments(stats: &SufficientStats, lm: &LagMoments, state: &ArIdioState) -> Result<DMatrix<f64>> {
    let n = stats.s_xf.nrows();
    let r = stats.s_ff.nrows();
    let inner = &stats.s_ff - &lm.ends;
    let lag_sym = &stats.s_ff_lag + stats.s_ff_lag.transpose();
    let mut out = DMatrix::zeros(n, r);
    for i in 0..n {
        let p = state.rho[i];
        let lhs = &stats.s_ff + &inner * (p * p) - &lag_sym * p;
        let rhs = stats.s_xf.row(i) + (stats.s_xf.row(i) - lm.xf_ends.row(i)) * (p * p)
            - (lm.xf_lagx.row(i) + lm.xf_lead.row(i)) * p;
        let inv = linalg::checked_sym_inverse(&lhs, 1e-13, "GLS factor moment")?;
        out.set_row(i, &(rhs * inv));
    }
    Ok(out)
}

/// Conditional M-step sequence: OLS loadings, AR coefficients and variances
/// given those loadings, then GLS loadings given the AR estimates.
pub(crate) fn ecm_loadings(
    stats: &SufficientStats,
    panel: &Panel,
    smoother: &SmootherOutput,
) -> Result<(DMatrix<f64>, ArIdioState)> {
    let ols = crate::em::update_loadings(stats)?;
    let lm = lag_moments(panel, smoother);
    let state = ar_from_moments(stats, &lm, &ols);
    let gls = gls_from_moments(stats, &lm, &state)?;
    Ok((gls, state))
}

/// EM with AR(1) idiosyncratic components (expectation conditional maximization).
/// The fitted `params.idio_ar` holds `ρ̂` and `params.idio_cov` the innovation variances.
pub fn ecm_fit(panel: &Panel, dims: &ModelDims, config: &EmConfig, init: Option<PcEstimate>) -> Result<EmResult> {
    run_em(panel, dims, config, init, IdioModel::Ar)
}

/// EM with a full, ridge-penalised idiosyncratic covariance.
pub fn ridge_fit(
    panel: &Panel,
    dims: &ModelDims,
    config: &EmConfig,
    ridge: &RidgeConfig,
    init: Option<PcEstimate>,
) -> Result<EmResult> {
    ridge.validate()?;
    run_em(panel, dims, config, init, IdioModel::Ridge(*ridge))
}
