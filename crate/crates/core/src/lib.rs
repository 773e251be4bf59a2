//! Estimation of large approximate dynamic factor models by EM with Kalman smoothing.

pub mod dgp;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod extensions;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod montecarlo;
pub mod panel;
pub mod pca;

pub use error::{DfmError, Result};
