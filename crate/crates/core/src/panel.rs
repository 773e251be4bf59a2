//! Panels, model parameters and the admissibility checks of the factor model
//!
//! `x_it = λ_i' F_t + ξ_it`, `F_t = A F_{t-1} + H u_t`, `ξ_it = ρ_i ξ_{it-1} + e_it`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::linalg;

/// Tolerance on the transition matrix spectral radius: stable means `< 1 - STABILITY_TOL`.
pub const STABILITY_TOL: f64 = 1e-10;

/// Sizes of the panel and of the factor space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Cross-section size.
    pub n: usize,
    /// Sample length.
    #[serde(rename = "T")]
    pub t: usize,
    /// Number of static factors.
    pub r: usize,
    /// Number of common shocks.
    pub q: usize,
}

impl ModelDims {
    pub fn new(n: usize, t: usize, r: usize, q: usize) -> Result<Self> {
        let dims = Self { n, t, r, q };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if self.r == 0 {
            return Err(DfmError::InvalidConfig("r must be at least 1".into()));
        }
        if self.q == 0 || self.q > self.r {
            return Err(DfmError::InvalidConfig(format!(
                "q must satisfy 1 <= q <= r (q = {}, r = {})",
                self.q, self.r
            )));
        }
        if self.r >= self.n {
            return Err(DfmError::InvalidConfig(format!(
                "r must be smaller than n (r = {}, n = {})",
                self.r, self.n
            )));
        }
        if self.t < 2 {
            return Err(DfmError::InvalidConfig(format!("T must be at least 2 (T = {})", self.t)));
        }
        Ok(())
    }
}

/// Observed panel stored as an `n x T` matrix: one row per series, one column per period.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    data: DMatrix<f64>,
}

impl Panel {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DfmError::NonFinite("panel".into()));
        }
        Ok(Self { data })
    }

    /// Number of series.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.n() != dims.n || self.len() != dims.t {
            return Err(DfmError::Shape(format!(
                "panel is {}x{} but dimensions say n = {}, T = {}",
                self.n(),
                self.len(),
                dims.n,
                dims.t
            )));
        }
        Ok(())
    }

    /// Per-series sample means over time.
    pub fn series_means(&self) -> DVector<f64> {
        let t = self.len().max(1) as f64;
        DVector::from_iterator(self.n(), self.data.row_iter().map(|row| row.sum() / t))
    }

    /// Panel with every series demeaned, together with the removed means.
    pub fn demeaned(&self) -> (Panel, DVector<f64>) {
        let means = self.series_means();
        let mut data = self.data.clone();
        for (i, mut row) in data.row_iter_mut().enumerate() {
            row.add_scalar_mut(-means[i]);
        }
        (Panel { data }, means)
    }

    /// Panel with every series scaled to unit sample variance (divisor `T`).
    /// Series with zero variance are left untouched.
    pub fn standardized(&self) -> (Panel, DVector<f64>) {
        let t = self.len().max(1) as f64;
        let mut data = self.data.clone();
        let mut scales = DVector::from_element(self.n(), 1.0);
        for (i, mut row) in data.row_iter_mut().enumerate() {
            let mean = row.sum() / t;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
            if var > 0.0 {
                let sd = var.sqrt();
                row /= sd;
                scales[i] = sd;
            }
        }
        (Panel { data }, scales)
    }
}

/// Idiosyncratic covariance: the EM path keeps only a diagonal, the ridge path a full matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum IdioCov {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl IdioCov {
    pub fn dim(&self) -> usize {
        match self {
            IdioCov::Diagonal(d) => d.len(),
            IdioCov::Full(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            IdioCov::Diagonal(d) => d.clone(),
            IdioCov::Full(m) => m.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            IdioCov::Diagonal(d) => DMatrix::from_diagonal(d),
            IdioCov::Full(m) => m.clone(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, IdioCov::Diagonal(_))
    }
}

/// Parameters of the static-form factor model with VAR(1) factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DfmParams {
    /// `n x r` loadings `Λ`.
    pub loadings: DMatrix<f64>,
    /// `r x r` VAR(1) matrix `A`.
    pub transition: DMatrix<f64>,
    /// `r x q` shock loading `H`.
    pub shock_loading: DMatrix<f64>,
    /// Covariance of the idiosyncratic innovations `e_t`.
    pub idio_cov: IdioCov,
    /// AR(1) coefficients `ρ_i` of the idiosyncratic components.
    pub idio_ar: DVector<f64>,
}

impl DfmParams {
    /// Parameters with white-noise idiosyncratic components.
    pub fn new(
        loadings: DMatrix<f64>,
        transition: DMatrix<f64>,
        shock_loading: DMatrix<f64>,
        idio_cov: IdioCov,
    ) -> Result<Self> {
        let n = loadings.nrows();
        let p = Self {
            loadings,
            transition,
            shock_loading,
            idio_cov,
            idio_ar: DVector::zeros(n),
        };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn q(&self) -> usize {
        self.shock_loading.ncols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n, r) = self.loadings.shape();
        let mut problems = Vec::new();
        if self.transition.shape() != (r, r) {
            problems.push(format!("A is {:?}, expected ({r}, {r})", self.transition.shape()));
        }
        if self.shock_loading.nrows() != r {
            problems.push(format!("H has {} rows, expected {r}", self.shock_loading.nrows()));
        }
        match &self.idio_cov {
            IdioCov::Diagonal(d) if d.len() != n => {
                problems.push(format!("diagonal idiosyncratic covariance has length {}, expected {n}", d.len()))
            }
            IdioCov::Full(m) if m.shape() != (n, n) => {
                problems.push(format!("idiosyncratic covariance is {:?}, expected ({n}, {n})", m.shape()))
            }
            _ => {}
        }
        if self.idio_ar.len() != n {
            problems.push(format!("rho has length {}, expected {n}", self.idio_ar.len()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DfmError::Shape(problems.join("; ")))
        }
    }

    /// `H H'`.
    pub fn shock_cov(&self) -> DMatrix<f64> {
        &self.shock_loading * self.shock_loading.transpose()
    }

    /// Stationary factor covariance `Γ^F` solving `Γ = A Γ A' + H H'`.
    pub fn factor_cov(&self) -> Result<DMatrix<f64>> {
        linalg::solve_discrete_lyapunov(&self.transition, &self.shock_cov())
    }

    /// Covariance of the idiosyncratic components themselves,
    /// `[Γ^ξ]_ij = [Γ^e]_ij / (1 - ρ_i ρ_j)`.
    pub fn idio_marginal_cov(&self) -> IdioCov {
        let rho = &self.idio_ar;
        match &self.idio_cov {
            IdioCov::Diagonal(d) => IdioCov::Diagonal(DVector::from_iterator(
                d.len(),
                d.iter().zip(rho.iter()).map(|(g, p)| g / (1.0 - p * p)),
            )),
            IdioCov::Full(m) => {
                let n = m.nrows();
                IdioCov::Full(DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (1.0 - rho[i] * rho[j])))
            }
        }
    }
}

/// `r x T` path of factor values.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath(pub DMatrix<f64>);

impl FactorPath {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DfmError::NonFinite("factor path".into()));
        }
        Ok(Self(values))
    }

    pub fn r(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// A breach of one of the model's admissibility assumptions.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `q <= r < n`, `r >= 1`, `T >= 2` fails.
    Dimensions(String),
    /// Spectral radius of `A` is not below one.
    UnstableTransition { spectral_radius: f64 },
    /// `|ρ_i| >= 1`.
    NonStationaryIdio { series: usize, rho: f64 },
    IdioCovNotSymmetric { max_asymmetry: f64 },
    IdioCovNonPositiveDiagonal { series: usize, value: f64 },
    ShockLoadingRankDeficient { rank: usize, q: usize },
    NonFiniteParameter(&'static str),
}

impl Violation {
    /// Short label of the assumption that is breached.
    pub fn assumption(&self) -> &'static str {
        match self {
            Violation::Dimensions(_) => "dimensions: 1 <= q <= r < n, T >= 2",
            Violation::UnstableTransition { .. } => "stable factor VAR",
            Violation::NonStationaryIdio { .. } => "stationary idiosyncratic AR(1)",
            Violation::IdioCovNotSymmetric { .. } => "symmetric idiosyncratic covariance",
            Violation::IdioCovNonPositiveDiagonal { .. } => "positive idiosyncratic variances",
            Violation::ShockLoadingRankDeficient { .. } => "rank(H) = q",
            Violation::NonFiniteParameter(_) => "finite parameters",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimensions(msg) => write!(f, "dimensions invalid: {msg}"),
            Violation::UnstableTransition { spectral_radius } => {
                write!(f, "A not stable (spectral radius {spectral_radius})")
            }
            Violation::NonStationaryIdio { series, rho } => {
                write!(f, "rho not stationary for series {series} (rho = {rho})")
            }
            Violation::IdioCovNotSymmetric { max_asymmetry } => {
                write!(f, "idiosyncratic covariance not symmetric (max |G - G'| = {max_asymmetry})")
            }
            Violation::IdioCovNonPositiveDiagonal { series, value } => {
                write!(f, "idiosyncratic variance not positive for series {series} ({value})")
            }
            Violation::ShockLoadingRankDeficient { rank, q } => {
                write!(f, "H rank-deficient (rank {rank} < q = {q})")
            }
            Violation::NonFiniteParameter(which) => write!(f, "{which} has non-finite entries"),
        }
    }
}

/// Checks every admissibility assumption on `params`. Shape inconsistencies are
/// reported as an error; assumption breaches come back as a list.
pub fn validate(params: &DfmParams, dims: &ModelDims) -> Result<Vec<Violation>> {
    params.check_shapes()?;
    if params.n() != dims.n || params.r() != dims.r || params.q() != dims.q {
        return Err(DfmError::Shape(format!(
            "parameters have n = {}, r = {}, q = {} but dimensions say n = {}, r = {}, q = {}",
            params.n(),
            params.r(),
            params.q(),
            dims.n,
            dims.r,
            dims.q
        )));
    }

    let mut out = Vec::new();
    if let Err(e) = dims.check() {
        out.push(Violation::Dimensions(e.to_string()));
    }

    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    let mut all_finite = true;
    for (name, m) in [
        ("loadings", &params.loadings),
        ("A", &params.transition),
        ("H", &params.shock_loading),
    ] {
        if !finite(m) {
            out.push(Violation::NonFiniteParameter(name));
            all_finite = false;
        }
    }
    if !finite(&params.idio_cov.to_dense()) {
        out.push(Violation::NonFiniteParameter("idiosyncratic covariance"));
        all_finite = false;
    }
    if params.idio_ar.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFiniteParameter("rho"));
        all_finite = false;
    }
    if !all_finite {
        return Ok(out);
    }

    let radius = linalg::spectral_radius(&params.transition);
    if radius >= 1.0 - STABILITY_TOL {
        out.push(Violation::UnstableTransition { spectral_radius: radius });
    }

    for (i, &rho) in params.idio_ar.iter().enumerate() {
        if rho.abs() >= 1.0 {
            out.push(Violation::NonStationaryIdio { series: i, rho });
        }
    }

    if let IdioCov::Full(m) = &params.idio_cov {
        let asym = linalg::max_abs_diff(m, &m.transpose());
        if asym > 1e-10 * m.amax().max(1.0) {
            out.push(Violation::IdioCovNotSymmetric { max_asymmetry: asym });
        }
    }
    for (i, &v) in params.idio_cov.diagonal().iter().enumerate() {
        if v <= 0.0 {
            out.push(Violation::IdioCovNonPositiveDiagonal { series: i, value: v });
        }
    }

    let rank = linalg::numerical_rank(&params.shock_loading, 1e-10);
    if rank < params.q() {
        out.push(Violation::ShockLoadingRankDeficient { rank, q: params.q() });
    }
    Ok(out)
}

/// `χ_it = λ_i' F_t` for every series and period.
pub fn common_component(params: &DfmParams, factors: &FactorPath) -> Result<DMatrix<f64>> {
    common_from_loadings(&params.loadings, factors.values())
}

/// `Λ F` with a shape check.
pub fn common_from_loadings(loadings: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if loadings.ncols() != factors.nrows() {
        return Err(DfmError::Shape(format!(
            "loadings have {} columns but factors have {} rows",
            loadings.ncols(),
            factors.nrows()
        )));
    }
    Ok(loadings * factors)
}
