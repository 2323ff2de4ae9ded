use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fpstats::FinitePopulation;

/// Stream reserved for population draws; replicates use streams `0..reps`.
pub(crate) const POPULATION_STREAM: u64 = u64::MAX;

/// One fixed population from the one-covariate model
/// `w = x + eta`, `Y(0) = 2x + rho eta + sqrt(1 - rho^2) delta`, `Y(1) = Y(0) + 1`,
/// with `x, eta, delta` iid standard normal.
pub fn gen_example1(n: usize, rho: f64, seed: u64) -> Result<FinitePopulation> {
    if rho.is_nan() || rho.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!("rho = {rho} must lie in [-1, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POPULATION_STREAM);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let x = draw(&mut rng);
    let eta = draw(&mut rng);
    let delta = draw(&mut rng);
    let c = (1.0 - rho * rho).sqrt();
    let y0: Vec<f64> = (0..n).map(|i| 2.0 * x[i] + rho * eta[i] + c * delta[i]).collect();
    let y1: Vec<f64> = y0.iter().map(|v| v + 1.0).collect();
    let w: Vec<f64> = x.iter().zip(&eta).map(|(a, b)| a + b).collect();
    FinitePopulation::new(
        DVector::from_vec(y1),
        DVector::from_vec(y0),
        DMatrix::from_column_slice(n, 1, &x),
        DMatrix::from_column_slice(n, 1, &w),
    )
}
