//! Design and analysis of finite-population experiments under complete
//! randomization and Mahalanobis rerandomization, with linearly adjusted
//! estimators and their non-Gaussian asymptotic laws.

pub mod asymptotics;
pub mod design;
pub mod dists;
pub mod error;
pub mod estimators;
pub mod fpstats;
pub mod inference;
pub mod linalg;
pub mod simlab;
mod serde_inf;

pub use error::{Error, Result};
pub use fpstats::{adjusted_moments, fp_cov, summarize, v_matrix, FinitePopulation, PopulationSummary};
