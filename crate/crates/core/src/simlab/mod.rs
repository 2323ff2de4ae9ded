//! Data generation, the Monte Carlo engine and canned reproductions.

mod config;
mod example1;
mod montecarlo;
mod reproduce;

pub use config::{DesignConfig, EstimatorSpec, ModelSpec, ScenarioConfig};
pub use example1::gen_example1;
pub use montecarlo::{
    replicate_rng, run_monte_carlo, run_on_population, EstimatorSummary, Histogram, MonteCarloReport,
    HISTOGRAM_BINS,
};
pub use reproduce::{reproduce_sec81, reproduce_table1, Sec81Row, Table1, Table1Cell};
