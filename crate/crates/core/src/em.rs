//! EM estimation of the factor model with a Kalman-smoother E-step.
//!
//! Each iteration runs the filter and smoother at the current parameters,
//! collects the conditional moments of the factors and updates `Λ`, `A`, `H`
//! and the idiosyncratic variances in closed form. Iterations stop when the
//! relative change of the log-likelihood
//! `|ℓ_{k+1} - ℓ_k| / |ℓ_{k+1} + ℓ_k|` falls below `epsilon`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};
use crate::extensions::{self, ArIdioState, RidgeConfig};
use crate::kalman::{kalman_filter_with, kalman_smoother, InitState, SmootherOutput};
use crate::linalg::{self, checked_sym_inverse, symmetrize};
use crate::panel::{DfmParams, IdioCov, ModelDims, Panel};
use crate::pca::{self, PcEstimate, PcOptions};

/// Relative slack allowed on a log-likelihood decrease before it counts as a violation.
pub const ASCENT_SLACK: f64 = 1e-8;

/// Idiosyncratic variances are kept above this fraction of the raw second moment.
pub const IDIO_FLOOR_REL: f64 = 1e-8;

const INVERSE_TOL: f64 = 1e-13;

/// Which likelihood drives the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoglikCriterion {
    /// Prediction-error log-likelihood from the filter.
    #[default]
    Marginal,
    /// Complete-data log-likelihood with the smoothed factors plugged in.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Eigenvalue shift in the `H` update when `q < r`; `None` means `0.1 / T`.
    pub vartheta_mstep: Option<f64>,
    /// Ridge added to `H H'` inside the filter and smoother.
    pub vartheta_ks: f64,
    pub criterion: LoglikCriterion,
    /// Fail with `NonMonotone` when the log-likelihood drops (diagonal model only).
    pub enforce_ascent: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iter: 500,
            vartheta_mstep: None,
            vartheta_ks: 0.0,
            criterion: LoglikCriterion::Marginal,
            enforce_ascent: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(DfmError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(DfmError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let Some(v) = self.vartheta_mstep {
            if !(v >= 0.0) {
                return Err(DfmError::InvalidConfig(format!("vartheta_mstep must be non-negative, got {v}")));
            }
        }
        if !(self.vartheta_ks >= 0.0) {
            return Err(DfmError::InvalidConfig(format!(
                "vartheta_ks must be non-negative, got {}",
                self.vartheta_ks
            )));
        }
        Ok(())
    }

    pub fn vartheta_mstep_for(&self, t_len: usize) -> f64 {
        self.vartheta_mstep.unwrap_or(0.1 / t_len as f64)
    }
}

/// Conditional moments of the factors collected in the E-step.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// `Σ_t x_t F_{t|T}'`.
    pub s_xf: DMatrix<f64>,
    /// `Σ_{t=1}^T E[F_t F_t']`.
    pub s_ff: DMatrix<f64>,
    /// `Σ_{t=2}^T E[F_t F_{t-1}']`.
    pub s_ff_lag: DMatrix<f64>,
    /// `Σ_{t=2}^T E[F_{t-1} F_{t-1}']`.
    pub s_ff_prev: DMatrix<f64>,
    /// `Σ_{t=2}^T E[F_t F_t']`.
    pub s_ff_curr: DMatrix<f64>,
    /// `Σ_t x_it²` per series.
    pub s_xx: DVector<f64>,
    pub t_len: usize,
}

impl SufficientStats {
    pub fn from_smoother(panel: &Panel, smoother: &SmootherOutput) -> Self {
        let x = panel.data();
        let f = &smoother.f_smooth;
        let (r, t_len) = f.shape();
        let mut s_ff = f * f.transpose();
        for p in &smoother.p_smooth {
            s_ff += p;
        }
        let mut s_ff_lag = DMatrix::zeros(r, r);
        let mut s_ff_prev = DMatrix::zeros(r, r);
        let mut s_ff_curr = DMatrix::zeros(r, r);
        if t_len >= 2 {
            let curr = f.columns(1, t_len - 1);
            let prev = f.columns(0, t_len - 1);
            s_ff_lag = curr * prev.transpose();
            s_ff_prev = prev * prev.transpose();
            s_ff_curr = curr * curr.transpose();
            for k in 1..t_len {
                s_ff_lag += &smoother.c_lag1[k];
                s_ff_prev += &smoother.p_smooth[k - 1];
                s_ff_curr += &smoother.p_smooth[k];
            }
        }
        Self {
            s_xf: x * f.transpose(),
            s_ff: symmetrize(&s_ff),
            s_ff_lag,
            s_ff_prev: symmetrize(&s_ff_prev),
            s_ff_curr: symmetrize(&s_ff_curr),
            s_xx: DVector::from_iterator(x.nrows(), x.row_iter().map(|row| row.norm_squared())),
            t_len,
        }
    }
}

/// Output of an EM run. The smoother output is the last E-step, run at `params`.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: DfmParams,
    pub smoother: SmootherOutput,
    /// Marginal log-likelihood at the starting values and after every iteration.
    pub loglik_trace: Vec<f64>,
    /// Values of the stopping criterion (equal to `loglik_trace` for the marginal criterion).
    pub criterion_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Initial state used by the last E-step.
    pub init: InitState,
    /// Idiosyncratic AR estimates when the ECM variant was run.
    pub ar_state: Option<ArIdioState>,
    /// Penalty used by the ridge variant.
    pub ridge_mu: Option<f64>,
}

impl EmResult {
    pub fn factors(&self) -> &DMatrix<f64> {
        &self.smoother.f_smooth
    }

    pub fn common_component(&self) -> DMatrix<f64> {
        &self.params.loadings * &self.smoother.f_smooth
    }

    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Runs the filter and smoother at `params` and assembles the sufficient statistics.
pub fn e_step(
    panel: &Panel,
    params: &DfmParams,
    init: &InitState,
    vartheta_ks: f64,
) -> Result<(SufficientStats, SmootherOutput, f64)> {
    let filter = kalman_filter_with(panel, params, init, vartheta_ks)?;
    let smoother = kalman_smoother(&filter, panel, params)?;
    let stats = SufficientStats::from_smoother(panel, &smoother);
    Ok((stats, smoother, filter.loglik))
}

/// Closed-form update with diagonal idiosyncratic covariance.
pub fn m_step(stats: &SufficientStats, q: usize, vartheta_mstep: f64) -> Result<DfmParams> {
    let loadings = update_loadings(stats)?;
    let (transition, shock_loading) = update_dynamics(stats, q, vartheta_mstep)?;
    let idio = update_idio_diag(stats, &loadings);
    DfmParams::new(loadings, transition, shock_loading, IdioCov::Diagonal(idio))
}

/// `Λ = S_xF S_FF⁻¹`.
pub fn update_loadings(stats: &SufficientStats) -> Result<DMatrix<f64>> {
    let inv = checked_sym_inverse(&stats.s_ff, INVERSE_TOL, "factor second moment S_FF")?;
    Ok(&stats.s_xf * inv)
}

/// VAR coefficients and shock loading.
pub fn update_dynamics(stats: &SufficientStats, q: usize, vartheta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = stats.s_ff.nrows();
    if q == 0 || q > r {
        return Err(DfmError::InvalidConfig(format!("need 1 <= q <= r, got r = {r}, q = {q}")));
    }
    if stats.t_len < 2 {
        return Err(DfmError::InvalidConfig("the VAR update needs T >= 2".into()));
    }
    let inv = checked_sym_inverse(&stats.s_ff_prev, INVERSE_TOL, "lagged factor second moment")?;
    let a = &stats.s_ff_lag * inv;
    let tf = stats.t_len as f64;
    let omega = symmetrize(
        &((&stats.s_ff_curr - &a * stats.s_ff_lag.transpose() - &stats.s_ff_lag * a.transpose()
            + &a * &stats.s_ff_prev * a.transpose())
            / tf),
    );
    Ok((a, shock_loading_from(&omega, q, vartheta)))
}

/// `H` from the factor innovation covariance: the symmetric square root when
/// `q = r`, otherwise `W (M - ϑ I)^{1/2}` on the top `q` eigenpairs.
pub fn shock_loading_from(omega: &DMatrix<f64>, q: usize, vartheta: f64) -> DMatrix<f64> {
    let r = omega.nrows();
    if q == r {
        return linalg::sym_sqrt_psd(omega);
    }
    let (vals, _) = linalg::sym_eigen_desc(omega);
    for (j, v) in vals.iter().take(q).enumerate() {
        if *v < vartheta {
            warn!("eigenvalue {} of the factor innovation covariance ({v:e}) is below vartheta ({vartheta:e}); column set to zero", j + 1);
        }
    }
    pca::top_q_loading(omega, q, vartheta)
}

/// `[Γ^e]_ii = T⁻¹ (Σ x_it² - 2 λ_i's_i + λ_i'S_FF λ_i)`, floored.
pub fn update_idio_diag(stats: &SufficientStats, loadings: &DMatrix<f64>) -> DVector<f64> {
    let tf = stats.t_len as f64;
    let lsff = loadings * &stats.s_ff;
    DVector::from_fn(loadings.nrows(), |i, _| {
        let cross = loadings.row(i).dot(&stats.s_xf.row(i));
        let quad = lsff.row(i).dot(&loadings.row(i));
        let v = (stats.s_xx[i] - 2.0 * cross + quad) / tf;
        v.max(idio_floor(stats.s_xx[i] / tf))
    })
}

pub(crate) fn idio_floor(second_moment: f64) -> f64 {
    (IDIO_FLOOR_REL * second_moment).max(1e-12)
}

/// PC starting values as diagonal-model parameters.
pub fn params_from_pc(est: &PcEstimate) -> Result<DfmParams> {
    let floor = est
        .idio_var
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1.0)
        * IDIO_FLOOR_REL;
    est.to_params(floor)
}

/// Starting state for the first E-step: zero mean and the unconditional
/// covariance of the VAR, or the identity when that is unavailable.
pub fn initial_state(params: &DfmParams, vartheta_ks: f64) -> InitState {
    let r = params.r();
    let q = params.shock_cov() + DMatrix::identity(r, r) * vartheta_ks;
    let stationary = linalg::solve_discrete_lyapunov(&params.transition, &q)
        .ok()
        .filter(|p| linalg::min_eigenvalue(p) >= -1e-10 * p.amax().max(1.0) && p.iter().all(|v| v.is_finite()));
    let p0 = stationary.unwrap_or_else(|| {
        warn!("unconditional factor covariance unavailable; initial MSE set to the identity");
        DMatrix::identity(r, r)
    });
    InitState {
        f0: DVector::zeros(r),
        p0: symmetrize(&p0),
    }
}

fn warm_start(smoother: &SmootherOutput, params: &DfmParams, vartheta_ks: f64) -> InitState {
    let p0 = symmetrize(&smoother.p0_smooth);
    let ok = smoother.f0_smooth.iter().chain(p0.iter()).all(|v| v.is_finite())
        && linalg::min_eigenvalue(&p0) >= -1e-10 * p0.amax().max(1.0);
    if ok {
        InitState {
            f0: smoother.f0_smooth.clone(),
            p0,
        }
    } else {
        debug!("smoothed initial MSE not positive semidefinite; using the unconditional covariance");
        let mut s = initial_state(params, vartheta_ks);
        s.f0 = smoother.f0_smooth.clone();
        if s.f0.iter().any(|v| !v.is_finite()) {
            s.f0 = DVector::zeros(params.r());
        }
        s
    }
}

/// Complete-data log-likelihood with `F_{t|T}` plugged in for the factors.
pub fn joint_loglik(panel: &Panel, params: &DfmParams, factors: &DMatrix<f64>, state_ridge: f64) -> Result<f64> {
    let n = panel.n() as f64;
    let t_len = factors.ncols();
    let r = params.r();
    let resid = panel.data() - &params.loadings * factors;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let obs = match &params.idio_cov {
        IdioCov::Diagonal(d) => {
            let logdet: f64 = d.iter().map(|v| v.ln()).sum();
            let quad: f64 = resid
                .row_iter()
                .zip(d.iter())
                .map(|(row, v)| row.norm_squared() / v)
                .sum();
            -0.5 * (t_len as f64 * (n * ln2pi + logdet) + quad)
        }
        IdioCov::Full(m) => {
            let chol = symmetrize(m)
                .cholesky()
                .ok_or_else(|| DfmError::InvalidParams("idiosyncratic covariance is not positive definite".into()))?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let w = chol.l().solve_lower_triangular(&resid).expect("nonsingular Cholesky factor");
            -0.5 * (t_len as f64 * (n * ln2pi + logdet) + w.norm_squared())
        }
    };
    let q = params.shock_cov() + DMatrix::identity(r, r) * state_ridge;
    let chol = q.cholesky().ok_or_else(|| {
        DfmError::Singular("factor innovation covariance in the joint log-likelihood".into())
    })?;
    let logdet_q = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut state = 0.0;
    for k in 1..t_len {
        let w = factors.column(k) - &params.transition * factors.column(k - 1);
        let z = chol.l().solve_lower_triangular(&w).expect("nonsingular Cholesky factor");
        state += r as f64 * ln2pi + logdet_q + z.norm_squared();
    }
    Ok(obs - 0.5 * state)
}

/// How the idiosyncratic part is modelled inside the EM loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum IdioModel {
    Diagonal,
    Ridge(RidgeConfig),
    Ar,
}

/// EM with diagonal idiosyncratic covariance. The panel is used as given (no centering).
pub fn em_fit(panel: &Panel, dims: &ModelDims, config: &EmConfig, init: Option<PcEstimate>) -> Result<EmResult> {
    run_em(panel, dims, config, init, IdioModel::Diagonal)
}

pub(crate) fn run_em(
    panel: &Panel,
    dims: &ModelDims,
    config: &EmConfig,
    init: Option<PcEstimate>,
    model: IdioModel,
) -> Result<EmResult> {
    config.validate()?;
    dims.check()?;
    panel.check_dims(dims)?;
    let pc = match init {
        Some(est) => est,
        None => pca::pc_estimate_with(panel, dims.r, dims.q, PcOptions { center: false })?,
    };
    if pc.loadings.shape() != (dims.n, dims.r) || pc.shock_loading.shape() != (dims.r, dims.q) {
        return Err(DfmError::Shape("starting values do not match the model dimensions".into()));
    }

    let vartheta = config.vartheta_mstep_for(dims.t);
    let ridge_mu = match model {
        IdioModel::Ridge(cfg) => Some(cfg.resolve(dims.n, dims.t)),
        _ => None,
    };

    let mut params = params_from_pc(&pc)?;
    let mut ar_state = None;
    if let IdioModel::Ar = model {
        ar_state = Some(ArIdioState::white_noise(&pc.idio_var));
    }
    if let (IdioModel::Ridge(_), Some(mu)) = (model, ridge_mu) {
        let resid = panel.data() - &pc.loadings * &pc.factors;
        let s = symmetrize(&(&resid * resid.transpose() / dims.t as f64));
        params.idio_cov = IdioCov::Full(extensions::ridge_covariance(&s, mu)?);
    }

    let mut init_state = initial_state(&params, config.vartheta_ks);
    let filter_params = |p: &DfmParams, ar: &Option<ArIdioState>| -> DfmParams {
        match ar {
            Some(state) => state.filter_params(p),
            None => p.clone(),
        }
    };

    let fp = filter_params(&params, &ar_state);
    let (mut stats, mut smoother, mut ll) = e_step(panel, &fp, &init_state, config.vartheta_ks)?;
    if !ll.is_finite() {
        return Err(DfmError::Divergence { iter: 0, loglik: ll });
    }
    let criterion = |p: &DfmParams, s: &SmootherOutput, ll: f64| -> Result<f64> {
        match config.criterion {
            LoglikCriterion::Marginal => Ok(ll),
            LoglikCriterion::Joint => joint_loglik(panel, p, &s.f_smooth, config.vartheta_ks.max(vartheta)),
        }
    };
    let mut loglik_trace = vec![ll];
    let mut criterion_trace = vec![criterion(&fp, &smoother, ll)?];
    let mut iters = 0;
    let mut converged = false;

    while iters < config.max_iter {
        let mut next = m_step_for(model, &stats, panel, &smoother, dims.q, vartheta, ridge_mu, &mut ar_state)?;
        next.idio_ar = DVector::zeros(dims.n);
        let next_init = warm_start(&smoother, &next, config.vartheta_ks);
        let next_fp = filter_params(&next, &ar_state);
        let (next_stats, next_smoother, next_ll) = e_step(panel, &next_fp, &next_init, config.vartheta_ks)?;
        iters += 1;
        if !next_ll.is_finite() {
            return Err(DfmError::Divergence { iter: iters, loglik: next_ll });
        }
        if config.enforce_ascent
            && model == IdioModel::Diagonal
            && next_ll < ll - ASCENT_SLACK * ll.abs()
        {
            return Err(DfmError::NonMonotone {
                iter: iters,
                before: ll,
                after: next_ll,
            });
        }
        let crit_prev = *criterion_trace.last().expect("trace is never empty");
        let crit = criterion(&next_fp, &next_smoother, next_ll)?;
        loglik_trace.push(next_ll);
        criterion_trace.push(crit);

        params = next;
        init_state = next_init;
        stats = next_stats;
        smoother = next_smoother;
        ll = next_ll;

        let delta = (crit - crit_prev).abs() / (crit + crit_prev).abs();
        debug!("EM iteration {iters}: loglik {ll:.6}, delta {delta:e}");
        if delta < config.epsilon {
            converged = true;
            break;
        }
    }

    if let Some(state) = &ar_state {
        params.idio_ar = state.rho.clone();
        params.idio_cov = IdioCov::Diagonal(state.gamma.clone());
    }
    Ok(EmResult {
        params,
        smoother,
        loglik_trace,
        criterion_trace,
        iters,
        converged,
        init: init_state,
        ar_state,
        ridge_mu,
    })
}

#[allow(clippy::too_many_arguments)]
fn m_step_for(
    model: IdioModel,
    stats: &SufficientStats,
    panel: &Panel,
    smoother: &SmootherOutput,
    q: usize,
    vartheta: f64,
    ridge_mu: Option<f64>,
    ar_state: &mut Option<ArIdioState>,
) -> Result<DfmParams> {
    match model {
        IdioModel::Diagonal => m_step(stats, q, vartheta),
        IdioModel::Ridge(_) => {
            let loadings = update_loadings(stats)?;
            let (a, h) = update_dynamics(stats, q, vartheta)?;
            let s = extensions::residual_covariance(stats, panel, &loadings);
            let cov = extensions::ridge_covariance(&s, ridge_mu.unwrap_or(0.0))?;
            DfmParams::new(loadings, a, h, IdioCov::Full(cov))
        }
        IdioModel::Ar => {
            let (a, h) = update_dynamics(stats, q, vartheta)?;
            let (loadings, state) = extensions::ecm_loadings(stats, panel, smoother)?;
            let gamma = state.gamma.clone();
            *ar_state = Some(state);
            DfmParams::new(loadings, a, h, IdioCov::Diagonal(gamma))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_dgp, DgpConfig};

    fn known_factor_stats(x: &DMatrix<f64>, f: &DMatrix<f64>) -> SufficientStats {
        let r = f.nrows();
        let t_len = f.ncols();
        let smoother = SmootherOutput {
            f_smooth: f.clone(),
            p_smooth: vec![DMatrix::zeros(r, r); t_len],
            c_lag1: vec![DMatrix::zeros(r, r); t_len],
            f0_smooth: DVector::zeros(r),
            p0_smooth: DMatrix::zeros(r, r),
            loglik: 0.0,
        };
        SufficientStats::from_smoother(&Panel::new(x.clone()).unwrap(), &smoother)
    }

    #[test]
    fn h_update_square_root() {
        let omega = DMatrix::identity(3, 3) * 4.0;
        let h = shock_loading_from(&omega, 3, 0.0);
        assert!(linalg::max_abs_diff(&h, &(DMatrix::identity(3, 3) * 2.0)) < 1e-12);
    }

    #[test]
    fn h_update_rank_one() {
        let omega = DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0]));
        let h = shock_loading_from(&omega, 1, 0.0);
        assert!((h[(0, 0)] - 3.0).abs() < 1e-12);
        assert!(h[(1, 0)].abs() < 1e-12);
        let h = shock_loading_from(&omega, 1, 10.0);
        assert!(h.amax() == 0.0);
    }

    #[test]
    fn single_period_has_empty_lag_sum() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let f = DMatrix::from_row_slice(1, 1, &[0.5]);
        let stats = known_factor_stats(&x, &f);
        assert_eq!(stats.s_ff_lag, DMatrix::zeros(1, 1));
        assert_eq!(stats.s_ff_prev, DMatrix::zeros(1, 1));
    }

    #[test]
    fn known_factors_give_ols() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(15, 60, 3, 3).unwrap(), 12)).unwrap();
        let f = d.factors.values();
        let x = d.panel.data();
        let stats = known_factor_stats(x, f);
        let p = m_step(&stats, 3, 0.0).unwrap();

        let ff_inv = (f * f.transpose()).try_inverse().unwrap();
        let lam = x * f.transpose() * &ff_inv;
        assert!(linalg::max_abs_diff(&p.loadings, &lam) < 1e-10);

        let resid = x - &lam * f;
        for i in 0..15 {
            let v = resid.row(i).norm_squared() / 60.0;
            assert!((p.idio_cov.diagonal()[i] - v).abs() < 1e-10 * v.max(1.0));
        }
        assert!(p.idio_cov.is_diagonal());

        let curr = f.columns(1, 59);
        let prev = f.columns(0, 59);
        let a = curr * prev.transpose() * (prev * prev.transpose()).try_inverse().unwrap();
        assert!(linalg::max_abs_diff(&p.transition, &a) < 1e-10);
        let u = curr - &a * prev;
        let omega = &u * u.transpose() / 60.0;
        assert!(linalg::max_abs_diff(&p.shock_cov(), &omega) < 1e-10);
    }

    #[test]
    fn noiseless_self_consistency() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(20, 40, 2, 2).unwrap(), 21)).unwrap();
        let mut p = d.params.clone();
        p.idio_cov = IdioCov::Diagonal(DVector::from_element(20, 1e-12));
        p.idio_ar = DVector::zeros(20);
        let chi = Panel::new(d.chi.clone()).unwrap();
        let init = InitState::stationary(&p).unwrap();
        let (stats, _, _) = e_step(&chi, &p, &init, 0.0).unwrap();
        let lam = update_loadings(&stats).unwrap();
        assert!(linalg::max_abs_diff(&lam, &p.loadings) < 1e-6);
    }

    #[test]
    fn fit_ascends_and_records_trace() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(30, 50, 2, 2).unwrap(), 3)).unwrap();
        let dims = ModelDims::new(30, 50, 2, 2).unwrap();
        let res = em_fit(&d.panel, &dims, &EmConfig::default(), None).unwrap();
        assert_eq!(res.loglik_trace.len(), res.iters + 1);
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - ASCENT_SLACK * w[0].abs());
        }
        assert!(res.params.idio_cov.is_diagonal());
    }

    #[test]
    fn max_iter_is_honoured() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(30, 50, 2, 2).unwrap(), 3)).unwrap();
        let dims = ModelDims::new(30, 50, 2, 2).unwrap();
        let cfg = EmConfig {
            epsilon: 1e-14,
            max_iter: 3,
            ..EmConfig::default()
        };
        let res = em_fit(&d.panel, &dims, &cfg, None).unwrap();
        assert_eq!(res.iters, 3);
        assert!(!res.converged);
        assert_eq!(res.loglik_trace.len(), 4);
    }

    #[test]
    fn joint_criterion_runs() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(25, 40, 2, 1).unwrap(), 8)).unwrap();
        let dims = ModelDims::new(25, 40, 2, 1).unwrap();
        let cfg = EmConfig {
            criterion: LoglikCriterion::Joint,
            ..EmConfig::default()
        };
        let res = em_fit(&d.panel, &dims, &cfg, None).unwrap();
        assert_eq!(res.criterion_trace.len(), res.loglik_trace.len());
        assert!(res.criterion_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig { epsilon: 0.0, ..EmConfig::default() }.validate().is_err());
        assert!(EmConfig { max_iter: 0, ..EmConfig::default() }.validate().is_err());
        assert!((EmConfig::default().vartheta_mstep_for(100) - 1e-3).abs() < 1e-18);
    }
}
