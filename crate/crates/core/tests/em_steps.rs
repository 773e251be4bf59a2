mod common;

use common::{max_abs, small_draw};
use dfm_core::dgp::{draw_dgp, DgpConfig};
use dfm_core::em::{em_fit, m_step, EmConfig, SufficientStats};
use dfm_core::panel::{ModelDims, Panel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Statistics for factors observed without error.
fn known_factor_stats(x: &DMatrix<f64>, f: &DMatrix<f64>) -> SufficientStats {
    let t_len = f.ncols();
    let curr = f.columns(1, t_len - 1);
    let prev = f.columns(0, t_len - 1);
    SufficientStats {
        s_xf: x * f.transpose(),
        s_ff: f * f.transpose(),
        s_ff_lag: curr * prev.transpose(),
        s_ff_prev: prev * prev.transpose(),
        s_ff_curr: curr * curr.transpose(),
        s_xx: DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.norm_squared())),
        t_len,
    }
}

/// Least squares of the rows of `y` on the rows of `z`, solved by SVD.
fn ols(y: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = z.transpose().svd(true, true);
    svd.solve(&y.transpose(), 1e-14).unwrap().transpose()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(a, b) / b.amax()
}

#[test]
fn m_step_with_known_factors_is_least_squares() {
    for (n, t_len, r, q, seed) in [(20, 60, 4, 4, 21), (15, 80, 3, 1, 22), (40, 50, 4, 2, 23)] {
        let d = small_draw(n, t_len, r, q, seed);
        let x = d.panel.data();
        let f = d.factors.values();
        let vartheta = 0.1 / t_len as f64;
        let p = m_step(&known_factor_stats(x, f), q, vartheta).unwrap();

        let lam = ols(x, f);
        assert!(rel(&p.loadings, &lam) < 1e-10);

        let resid = x - &lam * f;
        let gamma = DVector::from_iterator(n, resid.row_iter().map(|row| row.norm_squared() / t_len as f64));
        let got = p.idio_cov.diagonal();
        assert!((&got - &gamma).amax() / gamma.amax() < 1e-10);

        let curr = f.columns(1, t_len - 1).into_owned();
        let prev = f.columns(0, t_len - 1).into_owned();
        let a = ols(&curr, &prev);
        assert!(rel(&p.transition, &a) < 1e-10);

        let w = &curr - &a * &prev;
        let omega = &w * w.transpose() / t_len as f64;
        let eig = SymmetricEigen::new(omega.clone());
        let mut idx: Vec<usize> = (0..r).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let shift = if q == r { 0.0 } else { vartheta };
        let mut hh = DMatrix::zeros(r, r);
        for &j in idx.iter().take(q) {
            let v = eig.eigenvectors.column(j);
            hh += (eig.eigenvalues[j] - shift) * v * v.transpose();
        }
        let got_hh = &p.shock_loading * p.shock_loading.transpose();
        assert!(rel(&got_hh, &hh) < 1e-10, "HH' for q={q}");
        if q == r {
            assert!(rel(&p.shock_loading, &p.shock_loading.transpose()) < 1e-12);
        }
    }
}

fn nondecreasing(trace: &[f64]) -> Option<usize> {
    trace
        .windows(2)
        .position(|w| w[1] < w[0] - 1e-8 * w[0].abs())
}

#[test]
fn exact_em_never_decreases_the_likelihood() {
    let draws = [
        (30, 50, 4, 2, 0.5, 0.2, 1012u64),
        (30, 50, 4, 4, 0.0, 0.0, 1013),
        (60, 60, 4, 1, 0.5, 0.0, 1014),
        (40, 80, 3, 2, 0.0, 0.2, 1015),
    ];
    for (n, t_len, r, q, tau, delta, seed) in draws {
        let mut cfg = DgpConfig::new(ModelDims::new(n, t_len, r, q).unwrap(), seed);
        cfg.tau = tau;
        cfg.delta = delta;
        let d = draw_dgp(&cfg).unwrap();
        let vartheta = 0.1 / t_len as f64;
        let em = EmConfig {
            epsilon: 1e-9,
            max_iter: 60,
            vartheta_mstep: Some(vartheta),
            vartheta_ks: if q < r { vartheta } else { 0.0 },
            enforce_ascent: false,
            ..EmConfig::default()
        };
        let fit = em_fit(&d.panel, &cfg.dims, &em, None).unwrap();
        assert!(fit.loglik_trace.len() > 2);
        assert_eq!(nondecreasing(&fit.loglik_trace), None, "seed {seed}: {:?}", fit.loglik_trace);
    }
}

#[test]
fn default_settings_ascend_and_converge() {
    for (k, (n, t_len, q)) in [(50, 75, 2), (100, 100, 4), (75, 100, 2)].into_iter().enumerate() {
        let mut cfg = DgpConfig::new(ModelDims::new(n, t_len, 4, q).unwrap(), 500 + k as u64);
        cfg.tau = 0.5;
        cfg.delta = 0.2;
        let d = draw_dgp(&cfg).unwrap();
        let fit = em_fit(&d.panel, &cfg.dims, &EmConfig::default(), None).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iters + 1, fit.loglik_trace.len());
        assert_eq!(nondecreasing(&fit.loglik_trace), None);
    }
}

#[test]
fn em_improves_on_principal_components_when_singular() {
    let mut gain = 0.0;
    for s in 0..5 {
        let mut cfg = DgpConfig::new(ModelDims::new(100, 100, 4, 2).unwrap(), 31);
        cfg.stream = s;
        let d = draw_dgp(&cfg).unwrap();
        let pc = dfm_core::pca::pc_estimate_with(&d.panel, 4, 2, dfm_core::pca::PcOptions { center: false }).unwrap();
        let mse_pc = dfm_core::diagnostics::common_mse(&d.chi, &pc.common_component()).unwrap();
        let fit = em_fit(&d.panel, &cfg.dims, &EmConfig::default(), Some(pc)).unwrap();
        let mse_em = dfm_core::diagnostics::common_mse(&d.chi, &fit.common_component()).unwrap();
        gain += mse_em / mse_pc;
    }
    assert!(gain / 5.0 < 0.8);
}

#[test]
fn rejects_panels_that_do_not_match_the_dimensions() {
    let panel = Panel::new(DMatrix::from_element(10, 20, 1.0)).unwrap();
    let dims = ModelDims::new(12, 20, 2, 2).unwrap();
    assert!(em_fit(&panel, &dims, &EmConfig::default(), None).is_err());
}
