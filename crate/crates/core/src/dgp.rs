//! Synthetic panels from the simulation design: Gaussian loadings, a rescaled
//! VAR(1) for the factors, AR(1) idiosyncratic components with Toeplitz or
//! heterogeneous diagonal innovation covariance.
//!
//! Randomness comes from `ChaCha8Rng`. A draw is identified by `(seed, stream)`:
//! the generator is seeded with `seed` and switched to ChaCha stream `stream`,
//! so replication `b` of an experiment uses `rng_for(base_seed, b)` and the
//! replications never share key-stream blocks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::linalg;
use crate::panel::{validate, DfmParams, FactorPath, IdioCov, ModelDims, Panel, Violation};

/// Pre-sample periods simulated and discarded before the kept sample.
pub const BURN_IN: usize = 100;

const T_DOF: f64 = 4.0;

/// Distribution of the common and idiosyncratic innovations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Innovation {
    #[default]
    Gaussian,
    /// Multivariate Student t with 4 degrees of freedom, scaled to unit variance.
    #[serde(rename = "t4")]
    StudentT4,
}

impl fmt::Display for Innovation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Innovation::Gaussian => f.write_str("gaussian"),
            Innovation::StudentT4 => f.write_str("t4"),
        }
    }
}

impl FromStr for Innovation {
    type Err = DfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Innovation::Gaussian),
            "t4" | "student-t4" | "studentt4" | "student" => Ok(Innovation::StudentT4),
            other => Err(DfmError::InvalidConfig(format!(
                "unknown innovation '{other}' (expected gaussian or t4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub dims: ModelDims,
    /// Cross-correlation of the idiosyncratic innovations, `[Γ^e]_ij = τ^|i-j|`.
    pub tau: f64,
    /// `ρ_i ~ U[δ, 1 - 2δ]`; zero switches the idiosyncratic dynamics off.
    pub delta: f64,
    /// Signal-to-noise ratio: the common component explains `θ / (1 + θ)` of each series.
    pub theta: f64,
    /// Spectral radius of `A`.
    pub mu: f64,
    pub innovation: Innovation,
    pub seed: u64,
    pub stream: u64,
}

impl DgpConfig {
    /// Design defaults (`τ = δ = 0`, `θ = 0.5`, `μ = 0.5`, Gaussian).
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        Self {
            dims,
            tau: 0.0,
            delta: 0.0,
            theta: 0.5,
            mu: 0.5,
            innovation: Innovation::Gaussian,
            seed,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.check()?;
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(DfmError::InvalidConfig(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(DfmError::InvalidConfig(format!("theta must be positive, got {}", self.theta)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(DfmError::InvalidConfig(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.delta >= 0.0) {
            return Err(DfmError::InvalidConfig(format!("delta must be non-negative, got {}", self.delta)));
        }
        if self.delta > 0.0 && 1.0 - 2.0 * self.delta <= self.delta {
            return Err(DfmError::InvalidConfig(format!(
                "delta = {} leaves the support [delta, 1 - 2 delta] of rho empty; delta < 1/3 is required",
                self.delta
            )));
        }
        Ok(())
    }
}

/// One simulated data set with the parameters that generated it.
#[derive(Debug, Clone)]
pub struct DgpDraw {
    pub params: DfmParams,
    pub factors: FactorPath,
    pub panel: Panel,
    /// True common component `Λ F`.
    pub chi: DMatrix<f64>,
}

impl DgpDraw {
    /// Idiosyncratic part `panel - chi`.
    pub fn idiosyncratic(&self) -> DMatrix<f64> {
        self.panel.data() - &self.chi
    }
}

/// Generator for replication stream `stream` of seed `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws parameters and data for one replication of the simulation design.
pub fn draw_dgp(config: &DgpConfig) -> Result<DgpDraw> {
    config.validate()?;
    let mut rng = rng_for(config.seed, config.stream);
    let params = draw_params(config, &mut rng)?;
    let (factors, idio) = simulate_paths(&params, config.dims.t, config.innovation, &mut rng)?;
    let chi = &params.loadings * &factors;
    let panel = Panel::new(&chi + idio)?;
    Ok(DgpDraw {
        params,
        factors: FactorPath(factors),
        panel,
        chi,
    })
}

/// Simulates the model with fixed parameters, starting from `F_0 = 0`, `ξ_0 = 0`
/// and discarding `BURN_IN` periods. `H` may be rank deficient (including zero).
pub fn simulate_given(
    params: &DfmParams,
    t: usize,
    innovation: Innovation,
    seed: u64,
) -> Result<(FactorPath, Panel)> {
    params.check_shapes()?;
    if t == 0 {
        return Err(DfmError::InvalidConfig("T must be positive".into()));
    }
    let dims = ModelDims {
        n: params.n(),
        t,
        r: params.r(),
        q: params.q(),
    };
    let blocking: Vec<Violation> = validate(params, &dims)?
        .into_iter()
        .filter(|v| !matches!(v, Violation::ShockLoadingRankDeficient { .. } | Violation::Dimensions(_)))
        .collect();
    if let Some(v) = blocking.first() {
        return Err(DfmError::InvalidParams(v.to_string()));
    }
    let mut rng = rng_for(seed, 0);
    let (factors, idio) = simulate_paths(params, t, innovation, &mut rng)?;
    let panel = Panel::new(&params.loadings * &factors + idio)?;
    Ok((FactorPath(factors), panel))
}

fn draw_params(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<DfmParams> {
    let ModelDims { n, r, q, .. } = config.dims;

    let mut loadings = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));

    let diag = Uniform::new_inclusive(0.5, 0.8).expect("valid range");
    let off = Uniform::new_inclusive(0.0, 0.3).expect("valid range");
    let a_tilde = DMatrix::from_fn(r, r, |i, j| if i == j { diag.sample(rng) } else { off.sample(rng) });
    let transition = &a_tilde * (config.mu / linalg::spectral_radius(&a_tilde));

    let shock_loading = if q == r {
        DMatrix::identity(r, r)
    } else {
        let scale = Uniform::new_inclusive(0.8f64, 1.2).expect("valid range");
        let root = DVector::from_fn(r, |j, _| if j < q { scale.sample(rng).sqrt() } else { 0.0 });
        let gauss = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let orth = linalg::orthogonal_from_qr(gauss);
        (orth * DMatrix::from_diagonal(&root)).columns(0, q).into_owned()
    };

    let idio_ar = if config.delta > 0.0 {
        let u = Uniform::new_inclusive(config.delta, 1.0 - 2.0 * config.delta).expect("valid range");
        DVector::from_fn(n, |_, _| u.sample(rng))
    } else {
        DVector::zeros(n)
    };

    let idio_cov = if config.tau > 0.0 {
        IdioCov::Full(DMatrix::from_fn(n, n, |i, j| config.tau.powi(i.abs_diff(j) as i32)))
    } else {
        let u = Uniform::new_inclusive(0.5, 1.5).expect("valid range");
        IdioCov::Diagonal(DVector::from_fn(n, |_, _| u.sample(rng)))
    };

    let mut params = DfmParams {
        loadings: loadings.clone(),
        transition,
        shock_loading,
        idio_cov,
        idio_ar,
    };

    // Each series is rescaled through its loadings so that var(χ_i) = θ var(ξ_i).
    let factor_cov = params.factor_cov()?;
    let idio_var = params.idio_marginal_cov().diagonal();
    for i in 0..n {
        let row = loadings.row(i).transpose();
        let common_var = (row.transpose() * &factor_cov * &row)[(0, 0)];
        if common_var > 0.0 {
            let c = (config.theta * idio_var[i] / common_var).sqrt();
            loadings.row_mut(i).scale_mut(c);
        }
    }
    params.loadings = loadings;
    Ok(params)
}

/// Draws a standardized innovation vector; under `StudentT4` the whole vector
/// shares one chi-square mixing variable.
fn innovation_vector(rng: &mut ChaCha8Rng, dim: usize, innovation: Innovation) -> DVector<f64> {
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    match innovation {
        Innovation::Gaussian => z,
        Innovation::StudentT4 => {
            let w: f64 = ChiSquared::new(T_DOF).expect("positive dof").sample(rng);
            // t_ν has variance ν / (ν - 2); divide it out.
            let scale = (T_DOF / w).sqrt() / (T_DOF / (T_DOF - 2.0)).sqrt();
            z * scale
        }
    }
}

enum IdioFactor {
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

fn idio_factor(cov: &IdioCov) -> Result<IdioFactor> {
    match cov {
        IdioCov::Diagonal(d) => Ok(IdioFactor::Diagonal(d.map(|v| v.max(0.0).sqrt()))),
        IdioCov::Full(m) => {
            if let Some(ch) = linalg::symmetrize(m).cholesky() {
                Ok(IdioFactor::Lower(ch.l()))
            } else {
                // Positive semidefinite but singular: use the eigen square root.
                if linalg::min_eigenvalue(m) < -1e-10 * m.amax().max(1.0) {
                    return Err(DfmError::InvalidParams(
                        "idiosyncratic covariance is not positive semidefinite".into(),
                    ));
                }
                Ok(IdioFactor::Lower(linalg::sym_sqrt_psd(m)))
            }
        }
    }
}

/// Returns the kept `r x T` factor path and `n x T` idiosyncratic path.
fn simulate_paths(
    params: &DfmParams,
    t: usize,
    innovation: Innovation,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = params.n();
    let r = params.r();
    let q = params.q();
    let factor = idio_factor(&params.idio_cov)?;
    let a = &params.transition;
    let h = &params.shock_loading;
    let rho = &params.idio_ar;

    let mut f = DVector::zeros(r);
    let mut xi = DVector::zeros(n);
    let mut factors = DMatrix::zeros(r, t);
    let mut idio = DMatrix::zeros(n, t);

    for s in 0..BURN_IN + t {
        let u = innovation_vector(rng, q, innovation);
        f = a * &f + h * u;
        let z = innovation_vector(rng, n, innovation);
        let e = match &factor {
            IdioFactor::Diagonal(sd) => z.component_mul(sd),
            IdioFactor::Lower(l) => l * z,
        };
        xi = rho.component_mul(&xi) + e;
        if s >= BURN_IN {
            factors.set_column(s - BURN_IN, &f);
            idio.set_column(s - BURN_IN, &xi);
        }
    }
    Ok((factors, idio))
}
