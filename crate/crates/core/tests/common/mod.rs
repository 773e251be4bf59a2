//! Brute-force references: the joint Gaussian law of the stacked states and
//! observations, conditioned directly.

#![allow(dead_code)]

use dfm_core::dgp::{draw_dgp, DgpConfig, DgpDraw};
use dfm_core::kalman::InitState;
use dfm_core::panel::{DfmParams, ModelDims};
use nalgebra::{DMatrix, DVector};

pub fn small_draw(n: usize, t: usize, r: usize, q: usize, seed: u64) -> DgpDraw {
    let mut cfg = DgpConfig::new(ModelDims::new(n, t, r, q).unwrap(), seed);
    cfg.tau = 0.3;
    draw_dgp(&cfg).unwrap()
}

/// Moments of `(F_0, F_1, ..., F_T)` conditional on the first `obs` periods.
pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    r: usize,
}

impl DensePosterior {
    /// State at period `t` (0 is the initial state).
    pub fn state(&self, t: usize) -> DVector<f64> {
        self.mean.rows(t * self.r, self.r).into_owned()
    }

    pub fn cov_block(&self, s: usize, t: usize) -> DMatrix<f64> {
        self.cov.view((s * self.r, t * self.r), (self.r, self.r)).into_owned()
    }
}

pub fn dense_posterior(x: &DMatrix<f64>, params: &DfmParams, init: &InitState, obs: usize) -> DensePosterior {
    let r = params.r();
    let n = params.n();
    let t_len = x.ncols();
    let a = &params.transition;
    let q = &params.shock_loading * params.shock_loading.transpose();
    let k = r * (t_len + 1);

    let mut prior_mean = DVector::zeros(k);
    let mut marg = vec![init.p0.clone()];
    prior_mean.rows_mut(0, r).copy_from(&init.f0);
    for t in 1..=t_len {
        let m = a * prior_mean.rows(r * (t - 1), r).into_owned();
        prior_mean.rows_mut(r * t, r).copy_from(&m);
        marg.push(a * &marg[t - 1] * a.transpose() + &q);
    }
    let mut prior = DMatrix::zeros(k, k);
    for s in 0..=t_len {
        let mut block = marg[s].clone();
        for t in s..=t_len {
            prior.view_mut((r * t, r * s), (r, r)).copy_from(&block);
            prior.view_mut((r * s, r * t), (r, r)).copy_from(&block.transpose());
            block = a * block;
        }
    }

    let m = n * obs;
    let mut g = DMatrix::zeros(m, k);
    let mut noise = DMatrix::zeros(m, m);
    let idio = params.idio_cov.to_dense();
    let mut y = DVector::zeros(m);
    for t in 0..obs {
        g.view_mut((n * t, r * (t + 1)), (n, r)).copy_from(&params.loadings);
        noise.view_mut((n * t, n * t), (n, n)).copy_from(&idio);
        y.rows_mut(n * t, n).copy_from(&x.column(t));
    }
    let innov_cov = &g * &prior * g.transpose() + noise;
    let chol = innov_cov.clone().cholesky().expect("innovation covariance is positive definite");
    let resid = &y - &g * &prior_mean;
    let gain_t = chol.solve(&(&g * &prior));
    let mean = &prior_mean + gain_t.transpose() * &resid;
    let cov = &prior - (&g * &prior).transpose() * &gain_t;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(&resid));
    let loglik = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    DensePosterior { mean, cov, loglik, r }
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
