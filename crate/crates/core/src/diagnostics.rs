//! Evaluation metrics: trace statistics, common-component MSE, asymptotic
//! variances of the estimated common component, standardized errors and
//! coverage tables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::em::EmResult;
use crate::error::{DfmError, Result};
use crate::extensions::{ar1_precision, ArIdioState};
use crate::linalg::{self, symmetrize};
use crate::panel::IdioCov;

/// Periods `t < BURN_IN` (1-based) are left out of pooled statistics.
pub const BURN_IN: usize = 5;

/// Quantile levels of the coverage table, in print order.
pub const COVERAGE_ALPHAS: [f64; 8] = [0.99, 0.95, 0.90, 0.84, 0.16, 0.10, 0.05, 0.01];

/// `tr(M'M̂ (M̂'M̂)⁻¹ M̂'M) / tr(M'M)` for `M`, `M̂` with one column per
/// factor. Rows are time periods for factors and series for loadings.
pub fn trace_statistic(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(DfmError::Shape(format!(
            "trace statistic needs equal shapes, got {:?} and {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let gram = symmetrize(&(est.transpose() * est));
    let inv = linalg::checked_sym_inverse(&gram, 1e-12, "estimated moment matrix in the trace statistic")?;
    let cross = truth.transpose() * est;
    let num = (&cross * inv * cross.transpose()).trace();
    let den = truth.norm_squared();
    if den == 0.0 {
        return Err(DfmError::Singular("true matrix is zero in the trace statistic".into()));
    }
    Ok(num / den)
}

/// Mean squared entrywise difference.
pub fn common_mse(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(DfmError::Shape(format!(
            "MSE needs equal shapes, got {:?} and {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    Ok((truth - est).norm_squared() / truth.len() as f64)
}

pub fn relative_mse(a: f64, b: f64) -> f64 {
    a / b
}

/// Which estimator of the asymptotic variances to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AsvarMode {
    /// Diagonal idiosyncratic covariance, OLS loadings.
    #[default]
    DiagOls,
    /// Full (ridge) idiosyncratic covariance in the factor part.
    RidgeW,
    /// AR(1) idiosyncratic weighting in the loadings part.
    GlsV,
}

/// Precomputed inner matrices for `Ŵ_it` and `V̂_it`.
#[derive(Debug, Clone)]
pub struct AsvarEstimator {
    loadings: DMatrix<f64>,
    factors: DMatrix<f64>,
    /// `(n⁻¹ Λ̂'Γ̂⁻¹Λ̂)⁻¹`.
    w_inner: DMatrix<f64>,
    v_inner: VInner,
}

#[derive(Debug, Clone)]
enum VInner {
    /// `(T⁻¹ Σ_s F̂_sF̂_s')⁻¹` and the per-series variances it is scaled by.
    Common { inv: DMatrix<f64>, var: DVector<f64> },
    /// One `(T⁻¹ Σ_{t,s} F̂_t [Δ̂_i⁻¹]_{ts} F̂_s')⁻¹` per series.
    PerSeries(Vec<DMatrix<f64>>),
}

impl AsvarEstimator {
    pub fn new(result: &EmResult, mode: AsvarMode) -> Result<Self> {
        let loadings = result.params.loadings.clone();
        let factors = result.factors().clone();
        let n = loadings.nrows();
        let t_len = factors.ncols() as f64;

        let idio_diag = match (&result.ar_state, &result.params.idio_cov) {
            (Some(state), _) => state.marginal_var(),
            (None, cov) => cov.diagonal(),
        };
        let lgl = match (mode, &result.params.idio_cov) {
            (AsvarMode::RidgeW, IdioCov::Full(g)) => {
                let chol = symmetrize(g).cholesky().ok_or_else(|| {
                    DfmError::InvalidParams("ridge idiosyncratic covariance is not positive definite".into())
                })?;
                let w = chol.l().solve_lower_triangular(&loadings).expect("nonsingular Cholesky factor");
                w.transpose() * w
            }
            (AsvarMode::RidgeW, IdioCov::Diagonal(_)) => {
                return Err(DfmError::InvalidConfig(
                    "the ridge variance estimator needs a full idiosyncratic covariance".into(),
                ))
            }
            _ => {
                let scaled = DMatrix::from_fn(n, loadings.ncols(), |i, j| loadings[(i, j)] / idio_diag[i]);
                loadings.transpose() * scaled
            }
        };
        let w_inner = linalg::checked_sym_inverse(&symmetrize(&(lgl / n as f64)), 1e-12, "loadings moment matrix")?;

        let v_inner = match mode {
            AsvarMode::GlsV => {
                let state = result.ar_state.as_ref().ok_or_else(|| {
                    DfmError::InvalidConfig("the GLS variance estimator needs AR idiosyncratic estimates".into())
                })?;
                VInner::PerSeries(gls_inner(&factors, state)?)
            }
            _ => {
                let sff = symmetrize(&(&factors * factors.transpose() / t_len));
                let inv = linalg::checked_sym_inverse(&sff, 1e-12, "factor moment matrix")?;
                VInner::Common { inv, var: idio_diag }
            }
        };
        Ok(Self {
            loadings,
            factors,
            w_inner,
            v_inner,
        })
    }

    pub fn w(&self, i: usize) -> f64 {
        let l = self.loadings.row(i);
        (l * &self.w_inner * l.transpose())[(0, 0)]
    }

    pub fn v(&self, i: usize, t: usize) -> f64 {
        let f = self.factors.column(t);
        match &self.v_inner {
            VInner::Common { inv, var } => var[i] * (f.transpose() * inv * f)[(0, 0)],
            VInner::PerSeries(m) => (f.transpose() * &m[i] * f)[(0, 0)],
        }
    }

    /// `n⁻¹ Ŵ_it + T⁻¹ V̂_it`.
    pub fn variance(&self, i: usize, t: usize) -> f64 {
        self.w(i) / self.loadings.nrows() as f64 + self.v(i, t) / self.factors.ncols() as f64
    }
}

fn gls_inner(factors: &DMatrix<f64>, state: &ArIdioState) -> Result<Vec<DMatrix<f64>>> {
    let t_len = factors.ncols();
    (0..state.rho.len())
        .map(|i| {
            let prec = ar1_precision(state.rho[i], state.gamma[i], t_len);
            let m = symmetrize(&(factors * prec * factors.transpose() / t_len as f64));
            linalg::checked_sym_inverse(&m, 1e-12, "weighted factor moment matrix")
        })
        .collect()
}

/// `(Ŵ_it, V̂_it)` for one entry.
pub fn asvar_hat(result: &EmResult, i: usize, t: usize, mode: AsvarMode) -> Result<(f64, f64)> {
    let est = AsvarEstimator::new(result, mode)?;
    Ok((est.w(i), est.v(i, t)))
}

/// `Z_it = (n⁻¹Ŵ_it + T⁻¹V̂_it)^{-1/2} (χ̂_it - χ_it)` for every entry.
pub fn z_scores(result: &EmResult, chi_true: &DMatrix<f64>, mode: AsvarMode) -> Result<DMatrix<f64>> {
    let chi = result.common_component();
    if chi.shape() != chi_true.shape() {
        return Err(DfmError::Shape(format!(
            "true common component is {:?}, estimate is {:?}",
            chi_true.shape(),
            chi.shape()
        )));
    }
    let est = AsvarEstimator::new(result, mode)?;
    Ok(DMatrix::from_fn(chi.nrows(), chi.ncols(), |i, t| {
        (chi[(i, t)] - chi_true[(i, t)]) / est.variance(i, t).sqrt()
    }))
}

/// Standard normal quantile.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(alpha)
}

/// Binned counts on `[lo, hi)` with equal widths, plus out-of-range tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && hi > lo) {
            return Err(DfmError::InvalidConfig(format!("bad histogram range [{lo}, {hi}) width {width}")));
        }
        let bins = ((hi - lo) / width).round() as usize;
        Ok(Self {
            lo,
            width,
            counts: vec![0; bins.max(1)],
            below: 0,
            above: 0,
        })
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.counts.len() as f64
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        (self.lo + self.width * k as f64, self.lo + self.width * (k + 1) as f64)
    }

    pub fn push(&mut self, z: f64) {
        if z < self.lo {
            self.below += 1;
        } else {
            let k = ((z - self.lo) / self.width).floor() as usize;
            match self.counts.get_mut(k) {
                Some(c) => *c += 1,
                None => self.above += 1,
            }
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.counts.len(), other.counts.len(), "histograms with different bins");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new(-5.0, 5.0, 0.1).expect("valid default range")
    }
}

/// Running tallies of a pooled sample of standardized errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZAccumulator {
    pub alphas: Vec<f64>,
    thresholds: Vec<f64>,
    below: Vec<u64>,
    count: u64,
    power_sums: [f64; 4],
    pub histogram: Histogram,
}

impl ZAccumulator {
    pub fn new(alphas: &[f64], histogram: Histogram) -> Self {
        Self {
            alphas: alphas.to_vec(),
            thresholds: alphas.iter().map(|&a| normal_quantile(a)).collect(),
            below: vec![0; alphas.len()],
            count: 0,
            power_sums: [0.0; 4],
            histogram,
        }
    }

    pub fn push(&mut self, z: f64) {
        if !z.is_finite() {
            return;
        }
        for (c, th) in self.below.iter_mut().zip(&self.thresholds) {
            if z <= *th {
                *c += 1;
            }
        }
        self.count += 1;
        let mut p = 1.0;
        for s in self.power_sums.iter_mut() {
            p *= z;
            *s += p;
        }
        self.histogram.push(z);
    }

    /// Adds every `Z_it` with 1-based `t >= burn_in`.
    pub fn push_matrix(&mut self, z: &DMatrix<f64>, burn_in: usize) {
        let start = burn_in.saturating_sub(1).min(z.ncols());
        for t in start..z.ncols() {
            for i in 0..z.nrows() {
                self.push(z[(i, t)]);
            }
        }
    }

    pub fn merge(&mut self, other: &ZAccumulator) {
        assert_eq!(self.alphas, other.alphas, "accumulators with different quantile levels");
        for (a, b) in self.below.iter_mut().zip(&other.below) {
            *a += b;
        }
        self.count += other.count;
        for (a, b) in self.power_sums.iter_mut().zip(&other.power_sums) {
            *a += b;
        }
        self.histogram.merge(&other.histogram);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn table(&self) -> CoverageTable {
        let n = self.count as f64;
        let coverage = self.below.iter().map(|&c| if n > 0.0 { c as f64 / n } else { f64::NAN }).collect();
        let [s1, s2, s3, s4] = self.power_sums.map(|s| s / n);
        let mean = s1;
        let m2 = s2 - mean * mean;
        let m3 = s3 - 3.0 * mean * s2 + 2.0 * mean.powi(3);
        let m4 = s4 - 4.0 * mean * s3 + 6.0 * mean * mean * s2 - 3.0 * mean.powi(4);
        CoverageTable {
            alphas: self.alphas.clone(),
            coverage,
            mean,
            std: m2.max(0.0).sqrt(),
            skewness: m3 / m2.powf(1.5),
            kurtosis: m4 / (m2 * m2),
            count: self.count,
        }
    }
}

impl Default for ZAccumulator {
    fn default() -> Self {
        Self::new(&COVERAGE_ALPHAS, Histogram::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub alphas: Vec<f64>,
    pub coverage: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub count: u64,
}

impl CoverageTable {
    pub fn at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|a| (a - alpha).abs() < 1e-12)
            .map(|k| self.coverage[k])
    }
}

/// Coverage of `Z` at the given levels, leaving out periods before `burn_in`.
pub fn coverage(z: &DMatrix<f64>, alphas: &[f64], burn_in: usize) -> CoverageTable {
    let mut acc = ZAccumulator::new(alphas, Histogram::default());
    acc.push_matrix(z, burn_in);
    acc.table()
}
