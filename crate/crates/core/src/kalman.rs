//! Kalman filter and smoother for the factor state space
//!
//! ```text
//! x_t = Λ F_t + e_t,        e_t ~ (0, Γ)
//! F_t = A F_{t-1} + w_t,    w_t ~ (0, H H' + ϑ I)
//! ```
//!
//! The observation dimension `n` is large and the state dimension `r` small,
//! so everything is pushed into `r x r` algebra. With `G = Λ'Γ⁻¹Λ` and
//! `y_t = Λ'Γ⁻¹x_t` computed once, the matrix inversion lemma gives
//!
//! ```text
//! Λ'S_t⁻¹v_t = (I + G P)⁻¹ (y_t - G F_{t|t-1})
//! Λ'S_t⁻¹Λ   = (I + G P)⁻¹ G
//! ```
//!
//! neither of which needs `P_{t|t-1}` to be invertible. The backward pass uses
//! the `r_t`, `N_t` recursion that only consumes these two quantities.

use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};
use crate::linalg::{self, symmetrize};
use crate::panel::{DfmParams, IdioCov, Panel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Initial condition `F_{0|0}`, `P_{0|0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitState {
    pub f0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl InitState {
    pub fn new(f0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let r = f0.len();
        if p0.shape() != (r, r) {
            return Err(DfmError::Shape(format!(
                "initial MSE is {:?}, expected ({r}, {r})",
                p0.shape()
            )));
        }
        if f0.iter().chain(p0.iter()).any(|v| !v.is_finite()) {
            return Err(DfmError::NonFinite("initial state".into()));
        }
        let p0 = symmetrize(&p0);
        if r > 0 && linalg::min_eigenvalue(&p0) < -1e-10 * p0.amax().max(1.0) {
            return Err(DfmError::InvalidParams("initial MSE is not positive semidefinite".into()));
        }
        Ok(Self { f0, p0 })
    }

    /// Zero mean with the unconditional factor covariance.
    pub fn stationary(params: &DfmParams) -> Result<Self> {
        let p0 = params.factor_cov()?;
        Self::new(DVector::zeros(params.r()), p0)
    }
}

/// Forward pass output. Index `k` of every per-period field refers to period `t = k + 1`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub f_pred: DMatrix<f64>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub f_filt: DMatrix<f64>,
    pub p_filt: Vec<DMatrix<f64>>,
    /// Gaussian prediction-error log-likelihood.
    pub loglik: f64,
    /// `Λ'S_t⁻¹v_t` per period.
    pub scaled_innovation: DMatrix<f64>,
    /// `Λ'S_t⁻¹Λ` per period.
    pub scaled_gain: Vec<DMatrix<f64>>,
    pub transition: DMatrix<f64>,
    pub init: InitState,
    pub n: usize,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.f_pred.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r(&self) -> usize {
        self.f_pred.nrows()
    }
}

/// Backward pass output.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub f_smooth: DMatrix<f64>,
    pub p_smooth: Vec<DMatrix<f64>>,
    /// `C_{t,t-1|T}`; entry `k` pairs period `k + 1` with period `k`, and `k = 0`
    /// pairs the first period with the initial state.
    pub c_lag1: Vec<DMatrix<f64>>,
    /// `F_{0|T}`.
    pub f0_smooth: DVector<f64>,
    /// `P_{0|T}`.
    pub p0_smooth: DMatrix<f64>,
    pub loglik: f64,
}

impl SmootherOutput {
    pub fn len(&self) -> usize {
        self.f_smooth.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Observation-side quantities that stay fixed over time.
struct ObsPrecomp {
    g: DMatrix<f64>,
    y: DMatrix<f64>,
    quad: Vec<f64>,
    logdet: f64,
}

fn precompute(panel: &Panel, params: &DfmParams) -> Result<ObsPrecomp> {
    let x = panel.data();
    let lam = &params.loadings;
    match &params.idio_cov {
        IdioCov::Diagonal(d) => {
            if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(DfmError::InvalidParams(
                    "idiosyncratic variances must be positive".into(),
                ));
            }
            let w = d.map(|v| 1.0 / v);
            let mut lw = lam.clone();
            for (i, mut row) in lw.row_iter_mut().enumerate() {
                row *= w[i];
            }
            let g = symmetrize(&(lam.transpose() * &lw));
            let y = lw.transpose() * x;
            let quad = x
                .column_iter()
                .map(|c| c.iter().zip(w.iter()).map(|(v, wi)| v * v * wi).sum())
                .collect();
            let logdet = d.iter().map(|v| v.ln()).sum();
            Ok(ObsPrecomp { g, y, quad, logdet })
        }
        IdioCov::Full(m) => {
            let chol = symmetrize(m).cholesky().ok_or_else(|| {
                DfmError::InvalidParams("idiosyncratic covariance is not positive definite".into())
            })?;
            let l = chol.l();
            let wl = l
                .solve_lower_triangular(lam)
                .ok_or_else(|| DfmError::Singular("idiosyncratic Cholesky factor".into()))?;
            let wx = l
                .solve_lower_triangular(x)
                .ok_or_else(|| DfmError::Singular("idiosyncratic Cholesky factor".into()))?;
            let g = symmetrize(&(wl.transpose() * &wl));
            let y = wl.transpose() * &wx;
            let quad = wx.column_iter().map(|c| c.norm_squared()).collect();
            let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(ObsPrecomp { g, y, quad, logdet })
        }
    }
}

fn check_inputs(panel: &Panel, params: &DfmParams, init: &InitState) -> Result<()> {
    params.check_shapes()?;
    if panel.n() != params.n() {
        return Err(DfmError::Shape(format!(
            "panel has {} series, parameters have {}",
            panel.n(),
            params.n()
        )));
    }
    if init.f0.len() != params.r() {
        return Err(DfmError::Shape(format!(
            "initial state has dimension {}, parameters have r = {}",
            init.f0.len(),
            params.r()
        )));
    }
    if panel.data().iter().any(|v| !v.is_finite()) {
        return Err(DfmError::NonFinite("panel".into()));
    }
    Ok(())
}

/// Kalman filter with state noise `H H'`.
pub fn kalman_filter(panel: &Panel, params: &DfmParams, init: &InitState) -> Result<FilterOutput> {
    kalman_filter_with(panel, params, init, 0.0)
}

/// Kalman filter with state noise `H H' + ϑ I`. Idiosyncratic AR coefficients are
/// ignored: `params.idio_cov` is used as the observation noise covariance.
pub fn kalman_filter_with(
    panel: &Panel,
    params: &DfmParams,
    init: &InitState,
    state_ridge: f64,
) -> Result<FilterOutput> {
    check_inputs(panel, params, init)?;
    let n = panel.n();
    let t_len = panel.len();
    let r = params.r();
    let obs = precompute(panel, params)?;
    let a = &params.transition;
    let at = a.transpose();
    let q = params.shock_cov() + DMatrix::identity(r, r) * state_ridge;
    let eye = DMatrix::<f64>::identity(r, r);

    let mut f_pred = DMatrix::zeros(r, t_len);
    let mut f_filt = DMatrix::zeros(r, t_len);
    let mut scaled_innovation = DMatrix::zeros(r, t_len);
    let mut p_pred = Vec::with_capacity(t_len);
    let mut p_filt = Vec::with_capacity(t_len);
    let mut scaled_gain = Vec::with_capacity(t_len);
    let mut loglik = 0.0;

    let mut f_prev = init.f0.clone();
    let mut p_prev = init.p0.clone();

    for k in 0..t_len {
        let t = k + 1;
        let fp = a * &f_prev;
        let pp = symmetrize(&(a * &p_prev * &at + &q));

        let gf = &obs.g * &fp;
        let yt = obs.y.column(k);
        let b = yt - &gf;
        let lu = (&eye + &obs.g * &pp).lu();
        let det = lu.determinant();
        if !(det.is_finite() && det > 0.0) {
            return Err(DfmError::SingularInnovation { t });
        }
        let mb = lu.solve(&b).ok_or(DfmError::SingularInnovation { t })?;
        let mg = symmetrize(&lu.solve(&obs.g).ok_or(DfmError::SingularInnovation { t })?);

        let pmb = &pp * &mb;
        let ff = &fp + &pmb;
        let pf = symmetrize(&(&pp - &pp * &mg * &pp));

        let quad = obs.quad[k] - 2.0 * fp.dot(&yt) + fp.dot(&gf) - b.dot(&pmb);
        let ll_t = -0.5 * (n as f64 * LN_2PI + obs.logdet + det.ln() + quad);
        if !ll_t.is_finite() {
            return Err(DfmError::SingularInnovation { t });
        }
        loglik += ll_t;

        f_pred.set_column(k, &fp);
        f_filt.set_column(k, &ff);
        scaled_innovation.set_column(k, &mb);
        p_pred.push(pp);
        p_filt.push(pf.clone());
        scaled_gain.push(mg);
        f_prev = ff;
        p_prev = pf;
    }

    Ok(FilterOutput {
        f_pred,
        p_pred,
        f_filt,
        p_filt,
        loglik,
        scaled_innovation,
        scaled_gain,
        transition: a.clone(),
        init: init.clone(),
        n,
    })
}

/// Inversion-free backward recursion, valid for singular `P_{t|t-1}`.
pub fn kalman_smoother(filter: &FilterOutput, panel: &Panel, params: &DfmParams) -> Result<SmootherOutput> {
    if panel.len() != filter.len() || panel.n() != filter.n || params.r() != filter.r() {
        return Err(DfmError::Shape("smoother inputs do not match the filter output".into()));
    }
    let r = filter.r();
    let t_len = filter.len();
    let a = &filter.transition;
    let eye = DMatrix::<f64>::identity(r, r);

    let mut f_smooth = DMatrix::zeros(r, t_len);
    let mut p_smooth = vec![DMatrix::zeros(r, r); t_len];
    let mut c_lag1 = vec![DMatrix::zeros(r, r); t_len];

    let mut r_vec = DVector::zeros(r);
    let mut n_mat = DMatrix::zeros(r, r);
    for k in (0..t_len).rev() {
        let pp = &filter.p_pred[k];
        let mg = &filter.scaled_gain[k];
        let l = a * (&eye - pp * mg);
        r_vec = filter.scaled_innovation.column(k) + l.transpose() * &r_vec;
        n_mat = symmetrize(&(mg + l.transpose() * &n_mat * &l));

        let fs = filter.f_pred.column(k) + pp * &r_vec;
        f_smooth.set_column(k, &fs);
        p_smooth[k] = symmetrize(&(pp - pp * &n_mat * pp));

        let p_prev_filt = if k == 0 { &filter.init.p0 } else { &filter.p_filt[k - 1] };
        c_lag1[k] = (&eye - pp * &n_mat) * a * p_prev_filt;
    }

    let p00 = &filter.init.p0;
    let f0_smooth = &filter.init.f0 + p00 * a.transpose() * &r_vec;
    let p0_smooth = symmetrize(&(p00 - p00 * a.transpose() * &n_mat * a * p00));

    Ok(SmootherOutput {
        f_smooth,
        p_smooth,
        c_lag1,
        f0_smooth,
        p0_smooth,
        loglik: filter.loglik,
    })
}

/// Classical fixed-interval smoother with gain `J_t = P_{t|t} A' P_{t+1|t}⁻¹`.
/// Requires every `P_{t|t-1}` to be invertible.
pub fn classical_smoother(filter: &FilterOutput) -> Result<SmootherOutput> {
    let r = filter.r();
    let t_len = filter.len();
    let a = &filter.transition;
    let mut f_smooth = filter.f_filt.clone();
    let mut p_smooth = filter.p_filt.clone();
    let mut c_lag1 = vec![DMatrix::zeros(r, r); t_len];

    let gain = |p_filt: &DMatrix<f64>, p_next_pred: &DMatrix<f64>, t: usize| -> Result<DMatrix<f64>> {
        let inv = linalg::checked_sym_inverse(p_next_pred, 1e-14, &format!("P_{{{t}|{}}}", t - 1))?;
        Ok(p_filt * a.transpose() * inv)
    };

    for k in (0..t_len.saturating_sub(1)).rev() {
        let j = gain(&filter.p_filt[k], &filter.p_pred[k + 1], k + 2)?;
        let df = f_smooth.column(k + 1) - filter.f_pred.column(k + 1);
        let fs = filter.f_filt.column(k) + &j * df;
        f_smooth.set_column(k, &fs);
        let dp = &p_smooth[k + 1] - &filter.p_pred[k + 1];
        p_smooth[k] = symmetrize(&(&filter.p_filt[k] + &j * dp * j.transpose()));
        c_lag1[k + 1] = &p_smooth[k + 1] * j.transpose();
    }

    let (f0_smooth, p0_smooth) = if t_len > 0 {
        let j = gain(&filter.init.p0, &filter.p_pred[0], 1)?;
        let df = f_smooth.column(0) - filter.f_pred.column(0);
        let dp = &p_smooth[0] - &filter.p_pred[0];
        c_lag1[0] = &p_smooth[0] * j.transpose();
        (
            &filter.init.f0 + &j * df,
            symmetrize(&(&filter.init.p0 + &j * dp * j.transpose())),
        )
    } else {
        (filter.init.f0.clone(), filter.init.p0.clone())
    };

    Ok(SmootherOutput {
        f_smooth,
        p_smooth,
        c_lag1,
        f0_smooth,
        p0_smooth,
        loglik: filter.loglik,
    })
}

/// Convergence tolerance for the prediction MSE, in spectral norm.
pub const STEADY_STATE_TOL: f64 = 1e-8;

/// Number of leading periods for which traces are reported.
pub const STEADY_STATE_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    /// `tr(P_{0|0}) / q`.
    pub init_trace: f64,
    /// `tr(P_{t|t-1}) / q` for `t = 1..=min(T, 5)`.
    pub pred_trace: Vec<f64>,
    /// `tr(P_{t|t}) / q`.
    pub filt_trace: Vec<f64>,
    /// `tr(P_{t|t}) n / q`.
    pub filt_trace_scaled: Vec<f64>,
    /// First `t` with `‖P_{t|t-1} - P_{t-1|t-2}‖ < tol`.
    pub t_bar: Option<usize>,
}

pub fn steady_state_diagnostics(filter: &FilterOutput, q: usize) -> SteadyStateReport {
    let qf = q.max(1) as f64;
    let rows = filter.len().min(STEADY_STATE_ROWS);
    let pred_trace = filter.p_pred[..rows].iter().map(|p| p.trace() / qf).collect();
    let filt_trace: Vec<f64> = filter.p_filt[..rows].iter().map(|p| p.trace() / qf).collect();
    let filt_trace_scaled = filt_trace.iter().map(|v| v * filter.n as f64).collect();
    let t_bar = (1..filter.len())
        .find(|&k| linalg::spectral_norm(&(&filter.p_pred[k] - &filter.p_pred[k - 1])) < STEADY_STATE_TOL)
        .map(|k| k + 1);
    SteadyStateReport {
        init_trace: filter.init.p0.trace() / qf,
        pred_trace,
        filt_trace,
        filt_trace_scaled,
        t_bar,
    }
}

/// `tr(P_{t|T}) / q` for the leading periods.
pub fn smoothed_traces(smoother: &SmootherOutput, q: usize) -> Vec<f64> {
    let qf = q.max(1) as f64;
    smoother.p_smooth[..smoother.len().min(STEADY_STATE_ROWS)]
        .iter()
        .map(|p| p.trace() / qf)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_dgp, DgpConfig};
    use crate::panel::ModelDims;

    fn scalar_params() -> DfmParams {
        DfmParams::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            IdioCov::Diagonal(DVector::from_element(1, 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let p = scalar_params();
        let xs = [0.3, -1.2, 2.5, 0.0];
        let panel = Panel::new(DMatrix::from_row_slice(1, 4, &xs)).unwrap();
        let init = InitState::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let out = kalman_filter(&panel, &p, &init).unwrap();
        let mut ll = 0.0;
        for (k, x) in xs.iter().enumerate() {
            assert!((out.p_pred[k][(0, 0)] - 1.0).abs() < 1e-15);
            assert!((out.p_filt[k][(0, 0)] - 0.5).abs() < 1e-15);
            assert!((out.f_filt[(0, k)] - 0.5 * x).abs() < 1e-15);
            ll += -0.5 * (LN_2PI + 2f64.ln() + x * x / 2.0);
        }
        assert!((out.loglik - ll).abs() < 1e-12);
    }

    #[test]
    fn zero_panel_gives_zero_means() {
        let p = DfmParams::new(
            DMatrix::from_row_slice(3, 1, &[1.0, 0.5, -0.3]),
            DMatrix::from_element(1, 1, 0.4),
            DMatrix::from_element(1, 1, 1.0),
            IdioCov::Diagonal(DVector::from_vec(vec![1.0, 2.0, 0.5])),
        )
        .unwrap();
        let panel = Panel::new(DMatrix::zeros(3, 6)).unwrap();
        let init = InitState::stationary(&p).unwrap();
        let out = kalman_filter(&panel, &p, &init).unwrap();
        assert!(out.f_filt.iter().all(|&v| v == 0.0));
        let mut ll = 0.0;
        for k in 0..6 {
            let pp = out.p_pred[k][(0, 0)];
            let s = &p.loadings * &p.loadings.transpose() * pp + DMatrix::from_diagonal(&p.idio_cov.diagonal());
            ll += -0.5 * (3.0 * LN_2PI + s.determinant().ln());
        }
        assert!((out.loglik - ll).abs() < 1e-10);
    }

    #[test]
    fn single_period_smoother_equals_filter() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(8, 2, 2, 1).unwrap(), 3)).unwrap();
        let one = Panel::new(d.panel.data().columns(0, 1).into_owned()).unwrap();
        let d = crate::dgp::DgpDraw { panel: one, ..d };
        let init = InitState::stationary(&d.params).unwrap();
        let f = kalman_filter(&d.panel, &d.params, &init).unwrap();
        let s = kalman_smoother(&f, &d.panel, &d.params).unwrap();
        assert!(linalg::max_abs_diff(&s.f_smooth, &f.f_filt) < 1e-14);
        assert!(linalg::max_abs_diff(&s.p_smooth[0], &f.p_filt[0]) < 1e-14);
    }

    #[test]
    fn last_period_smoother_equals_filter() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(10, 12, 3, 2).unwrap(), 8)).unwrap();
        let init = InitState::stationary(&d.params).unwrap();
        let f = kalman_filter(&d.panel, &d.params, &init).unwrap();
        let s = kalman_smoother(&f, &d.panel, &d.params).unwrap();
        let last = f.len() - 1;
        for i in 0..3 {
            assert!((s.f_smooth[(i, last)] - f.f_filt[(i, last)]).abs() < 1e-12);
        }
        assert!(linalg::max_abs_diff(&s.p_smooth[last], &f.p_filt[last]) < 1e-12);
    }

    #[test]
    fn inversion_free_matches_classical() {
        for seed in 0..4 {
            let mut cfg = DgpConfig::new(ModelDims::new(12, 15, 3, 3).unwrap(), seed);
            cfg.tau = 0.3;
            let d = draw_dgp(&cfg).unwrap();
            let init = InitState::stationary(&d.params).unwrap();
            let f = kalman_filter(&d.panel, &d.params, &init).unwrap();
            let a = kalman_smoother(&f, &d.panel, &d.params).unwrap();
            let b = classical_smoother(&f).unwrap();
            assert!(linalg::max_abs_diff(&a.f_smooth, &b.f_smooth) < 1e-8);
            for k in 0..f.len() {
                assert!(linalg::max_abs_diff(&a.p_smooth[k], &b.p_smooth[k]) < 1e-8);
                assert!(linalg::max_abs_diff(&a.c_lag1[k], &b.c_lag1[k]) < 1e-8);
            }
            assert!(linalg::max_abs_diff(&a.p0_smooth, &b.p0_smooth) < 1e-8);
            assert!((&a.f0_smooth - &b.f0_smooth).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_transition_reaches_steady_state_at_two() {
        let mut d = draw_dgp(&DgpConfig::new(ModelDims::new(10, 8, 2, 2).unwrap(), 1)).unwrap();
        d.params.transition = DMatrix::zeros(2, 2);
        let init = InitState::stationary(&d.params).unwrap();
        let f = kalman_filter(&d.panel, &d.params, &init).unwrap();
        let rep = steady_state_diagnostics(&f, 2);
        assert_eq!(rep.t_bar, Some(2));
        assert_eq!(rep.pred_trace.len(), 5);
        assert!((rep.pred_trace[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_and_full_agree_on_diagonal_covariance() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(9, 10, 2, 1).unwrap(), 4)).unwrap();
        let mut full = d.params.clone();
        full.idio_cov = IdioCov::Full(d.params.idio_cov.to_dense());
        let init = InitState::stationary(&d.params).unwrap();
        let a = kalman_filter(&d.panel, &d.params, &init).unwrap();
        let b = kalman_filter(&d.panel, &full, &init).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-9 * a.loglik.abs());
        assert!(linalg::max_abs_diff(&a.f_filt, &b.f_filt) < 1e-10);
    }

    #[test]
    fn rejects_mismatched_panel() {
        let p = scalar_params();
        let panel = Panel::new(DMatrix::zeros(2, 3)).unwrap();
        let init = InitState::stationary(&p).unwrap();
        assert!(matches!(kalman_filter(&panel, &p, &init), Err(DfmError::Shape(_))));
    }
}
