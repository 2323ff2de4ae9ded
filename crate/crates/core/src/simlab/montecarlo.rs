use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{Assignment, DesignSpec, RemSampler};
use crate::error::Result;
use crate::estimators::{fixed_fit, lin_fit, FitResult, TrialData};
use crate::fpstats::FinitePopulation;
use crate::inference::{confidence_interval, estimated_distribution, Method};

use super::config::{EstimatorSpec, ScenarioConfig};

pub const HISTOGRAM_BINS: usize = 81;

/// RNG for replicate `r`: stream `r` of the ChaCha8 generator keyed by the
/// master seed, so results do not depend on scheduling.
pub fn replicate_rng(master_seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(r);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// 81 equal bins over `+/- 5 sd`; values outside land in the end bins.
    fn build(values: &[f64], sd: f64) -> Self {
        let half = if sd > 0.0 { 5.0 * sd } else { 1.0 };
        let width = 2.0 * half / HISTOGRAM_BINS as f64;
        let edges = (0..=HISTOGRAM_BINS).map(|i| -half + i as f64 * width).collect();
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in values {
            let b = ((v + half) / width).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(HISTOGRAM_BINS - 1) };
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lower,upper,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorSpec,
    /// Standard deviation of `sqrt(n) (tauhat - tau)` over replicates.
    pub sampling_sd: f64,
    pub mean_error: f64,
    /// Mean of `sqrt(v_hat)`.
    pub mean_estimated_se: f64,
    pub mean_v_hat: f64,
    pub mean_v_hw: f64,
    pub mean_abs_hw_gap: f64,
    pub mean_ci_length: f64,
    pub coverage: f64,
    /// Of `sqrt(n) (tauhat - tau)`.
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub n: usize,
    pub reps: usize,
    pub tau: f64,
    #[serde(with = "crate::serde_inf")]
    pub a: f64,
    pub mean_attempts: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn get(&self, e: EstimatorSpec) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == e)
    }
}

#[derive(Debug, Clone, Copy)]
struct Record {
    err: f64,
    v_hat: f64,
    v_hw: f64,
    ci_len: f64,
    covered: bool,
}

/// Pairwise summation, so the result depends only on the order of `v`.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

struct Prepared {
    w: DMatrix<f64>,
    xw: DMatrix<f64>,
}

fn observed(pop: &FinitePopulation, z: &Assignment) -> DVector<f64> {
    DVector::from_iterator(
        pop.n(),
        (0..pop.n()).map(|i| if z.is_treated(i) { pop.y1()[i] } else { pop.y0()[i] }),
    )
}

fn fit_one(pop: &FinitePopulation, prep: &Prepared, z: &Assignment, e: EstimatorSpec, knows: bool) -> Result<FitResult> {
    let y = observed(pop, z);
    let x = knows.then(|| pop.x().clone());
    match e {
        EstimatorSpec::Diff => {
            let d = TrialData::new(y, z.clone(), prep.w.clone(), x)?;
            let zero = DVector::zeros(pop.j());
            fixed_fit(&d, &zero, &zero)
        }
        EstimatorSpec::Lin => lin_fit(&TrialData::new(y, z.clone(), prep.w.clone(), x)?),
        EstimatorSpec::LinXw => lin_fit(&TrialData::new(y, z.clone(), prep.xw.clone(), x)?),
    }
}

/// Replicate `design` on a fixed population and apply each estimator.
#[allow(clippy::too_many_arguments)]
pub fn run_on_population(
    pop: &FinitePopulation,
    design: &DesignSpec,
    estimators: &[EstimatorSpec],
    reps: usize,
    alpha: f64,
    master_seed: u64,
    knows_design: bool,
) -> Result<MonteCarloReport> {
    let n = pop.n();
    let tau = pop.tau();
    let sampler = RemSampler::new(pop.x(), design)?;
    let prep = Prepared {
        w: pop.w().clone(),
        xw: DMatrix::from_fn(n, pop.k() + pop.j(), |i, c| {
            if c < pop.k() {
                pop.x()[(i, c)]
            } else {
                pop.w()[(i, c - pop.k())]
            }
        }),
    };
    let a = design.threshold();
    let k = pop.k();
    let sqrt_n = (n as f64).sqrt();

    let rows: Vec<(u64, Vec<Record>)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| -> Result<(u64, Vec<Record>)> {
            let mut rng = replicate_rng(master_seed, r);
            let (z, attempts) = sampler.draw(&mut rng)?;
            let recs = estimators
                .iter()
                .map(|&e| {
                    let fit = fit_one(pop, &prep, &z, e, knows_design)?;
                    let dist = estimated_distribution(&fit, knows_design, k, a)?;
                    let method = if knows_design { Method::FullKnowledge } else { Method::NoKnowledge };
                    let ci = confidence_interval(fit.tau_hat, &dist, n, alpha, method)?;
                    Ok(Record {
                        err: fit.tau_hat - tau,
                        v_hat: fit.v_hat,
                        v_hw: fit.v_hw,
                        ci_len: ci.width(),
                        covered: ci.contains(tau),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((attempts, recs))
        })
        .collect::<Result<Vec<_>>>()?;

    let attempts: Vec<f64> = rows.iter().map(|(a, _)| *a as f64).collect();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(ei, &e)| {
            let col = |f: &dyn Fn(&Record) -> f64| -> Vec<f64> { rows.iter().map(|(_, r)| f(&r[ei])).collect() };
            let dev = col(&|r| sqrt_n * r.err);
            let m = mean(&dev);
            let sampling_sd = if reps > 1 {
                let sq: Vec<f64> = dev.iter().map(|d| (d - m) * (d - m)).collect();
                (pairwise_sum(&sq) / (reps as f64 - 1.0)).sqrt()
            } else {
                0.0
            };
            EstimatorSummary {
                estimator: e,
                sampling_sd,
                mean_error: mean(&col(&|r| r.err)),
                mean_estimated_se: mean(&col(&|r| r.v_hat.sqrt())),
                mean_v_hat: mean(&col(&|r| r.v_hat)),
                mean_v_hw: mean(&col(&|r| r.v_hw)),
                mean_abs_hw_gap: mean(&col(&|r| (r.v_hw - r.v_hat).abs())),
                mean_ci_length: mean(&col(&|r| r.ci_len)),
                coverage: mean(&col(&|r| r.covered as u8 as f64)),
                histogram: Histogram::build(&dev, sampling_sd),
            }
        })
        .collect();
    Ok(MonteCarloReport { n, reps, tau, a, mean_attempts: mean(&attempts), estimators: summaries })
}

pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let pop = cfg.population()?;
    let design = cfg.design_spec(pop.n(), pop.k())?;
    run_on_population(&pop, &design, &cfg.estimators, cfg.reps, cfg.alpha, cfg.master_seed, cfg.knows_design)
}
