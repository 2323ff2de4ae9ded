#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rerand::design::Assignment;
use rerand::FinitePopulation;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Outcomes with heterogeneous, partly nonlinear effects in the covariates.
fn outcomes(rng: &mut ChaCha8Rng, x: &DMatrix<f64>, w: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows();
    let bx0: Vec<f64> = (0..x.ncols()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let bw0: Vec<f64> = (0..w.ncols()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let bw1: Vec<f64> = (0..w.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tau = rng.random_range(-1.0..1.0);
    let curve = rng.random_range(0.0..0.5);
    let mut y0 = DVector::zeros(n);
    let mut y1 = DVector::zeros(n);
    for i in 0..n {
        let lin0: f64 = (0..x.ncols()).map(|c| bx0[c] * x[(i, c)]).sum::<f64>()
            + (0..w.ncols()).map(|c| bw0[c] * w[(i, c)]).sum::<f64>();
        let lin1: f64 = (0..w.ncols()).map(|c| bw1[c] * w[(i, c)]).sum();
        let bend = if x.ncols() > 0 { curve * x[(i, 0)] * x[(i, 0)] } else { 0.0 };
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        y0[i] = lin0 + bend + e0;
        y1[i] = y0[i] + tau + lin1 + 0.5 * e1;
    }
    (y1, y0)
}

/// General position: `x` and `w` correlated but neither spans the other.
pub fn random_population(seed: u64, n: usize, k: usize, j: usize) -> FinitePopulation {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, k);
    let noise = normal_matrix(&mut r, n, j);
    let w = DMatrix::from_fn(n, j, |i, c| noise[(i, c)] + if k > 0 { 0.7 * x[(i, c % k)] } else { 0.0 });
    let (y1, y0) = outcomes(&mut r, &x, &w);
    FinitePopulation::new(y1, y0, x, w).expect("random population")
}

/// `w = (x, extra columns)`, so the analysis covariates span the design covariates.
pub fn analyzer_richer(seed: u64, n: usize, k: usize, extra: usize) -> FinitePopulation {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, k);
    let e = normal_matrix(&mut r, n, extra);
    let w = DMatrix::from_fn(n, k + extra, |i, c| if c < k { x[(i, c)] } else { e[(i, c - k)] + 0.4 * x[(i, 0)] });
    let (y1, y0) = outcomes(&mut r, &x, &w);
    FinitePopulation::new(y1, y0, x, w).expect("analyzer-richer population")
}

/// `x = (w, extra columns)`, so the design covariates span the analysis covariates.
pub fn designer_richer(seed: u64, n: usize, j: usize, extra: usize) -> FinitePopulation {
    let mut r = rng(seed);
    let w = normal_matrix(&mut r, n, j);
    let e = normal_matrix(&mut r, n, extra);
    let x = DMatrix::from_fn(n, j + extra, |i, c| if c < j { w[(i, c)] } else { e[(i, c - j)] - 0.3 * w[(i, 0)] });
    let (y1, y0) = outcomes(&mut r, &x, &w);
    FinitePopulation::new(y1, y0, x, w).expect("designer-richer population")
}

pub fn observed(pop: &FinitePopulation, z: &Assignment) -> DVector<f64> {
    DVector::from_iterator(pop.n(), (0..pop.n()).map(|i| if z.is_treated(i) { pop.y1()[i] } else { pop.y0()[i] }))
}

/// Mean and variance (divisor = count) of a list of values.
pub fn moments(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var)
}

/// Treated-minus-control mean of one column.
pub fn mean_diff(col: &[f64], z: &Assignment) -> f64 {
    let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for (i, v) in col.iter().enumerate() {
        if z.is_treated(i) {
            s1 += v;
            n1 += 1.0;
        } else {
            s0 += v;
            n0 += 1.0;
        }
    }
    s1 / n1 - s0 / n0
}

/// Pearson chi-square statistic for observed counts against equal expected counts.
pub fn chi2_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}
