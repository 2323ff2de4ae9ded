use std::fmt;

use serde::Serialize;

use crate::design::DesignSpec;
use crate::dists::chi2_quantile;
use crate::error::Result;

use super::config::EstimatorSpec;
use super::example1::gen_example1;
use super::montecarlo::run_on_population;

/// ReM acceptance probability used by the canned studies.
const ACCEPT_P: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Cell {
    pub rho: f64,
    pub estimator: EstimatorSpec,
    pub sampling_se: f64,
    pub mean_estimated_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1 {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<Table1Cell>,
}

impl Table1 {
    pub fn cell(&self, rho: f64, estimator: EstimatorSpec) -> Option<&Table1Cell> {
        self.cells.iter().find(|c| c.rho == rho && c.estimator == estimator)
    }
}

impl fmt::Display for Table1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rhos: Vec<f64> = {
            let mut r: Vec<f64> = self.cells.iter().map(|c| c.rho).collect();
            r.dedup();
            r
        };
        write!(f, "{:<12}", "")?;
        for rho in &rhos {
            write!(f, "{:>22}", format!("rho = {rho}"))?;
        }
        writeln!(f)?;
        write!(f, "{:<12}", "")?;
        for _ in &rhos {
            write!(f, "{:>10}{:>12}", "s.e.", "est. s.e.")?;
        }
        writeln!(f)?;
        for (label, e) in [("unadjusted", EstimatorSpec::Diff), ("adjusted", EstimatorSpec::Lin)] {
            write!(f, "{label:<12}")?;
            for &rho in &rhos {
                if let Some(c) = self.cell(rho, e) {
                    write!(f, "{:>10.2}{:>12.2}", c.sampling_se, c.mean_estimated_se)?;
                }
            }
            writeln!(f)?;
        }
        write!(f, "n = {}, {} replications, seed {}", self.n, self.reps, self.seed)
    }
}

/// Sampling and mean estimated standard errors of the unadjusted and
/// `w`-adjusted estimators under ReM on `x`, for `rho` in `{0.9, 0}`.
pub fn reproduce_table1(n: usize, reps: usize, seed: u64) -> Result<Table1> {
    let a = chi2_quantile(1, ACCEPT_P)?;
    let ests = [EstimatorSpec::Diff, EstimatorSpec::Lin];
    let mut cells = Vec::new();
    for rho in [0.9, 0.0] {
        let pop = gen_example1(n, rho, seed)?;
        let rep = run_on_population(&pop, &DesignSpec::rem(n / 2, a), &ests, reps, 0.05, seed, false)?;
        for s in rep.estimators {
            cells.push(Table1Cell {
                rho,
                estimator: s.estimator,
                sampling_se: s.sampling_sd,
                mean_estimated_se: s.mean_estimated_se,
            });
        }
    }
    Ok(Table1 { n, reps, seed, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sec81Row {
    pub n: usize,
    pub estimator: EstimatorSpec,
    pub mean_ci_length: f64,
    pub coverage: f64,
    pub sampling_sd: f64,
    pub mean_estimated_se: f64,
}

impl Sec81Row {
    pub fn csv_header() -> &'static str {
        "n,estimator,mean_ci_length,coverage,sampling_sd,mean_estimated_se"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n,
            self.estimator.name(),
            self.mean_ci_length,
            self.coverage,
            self.sampling_sd,
            self.mean_estimated_se
        )
    }
}

/// 95% interval length and coverage for the unadjusted, `w`-adjusted and
/// `(x, w)`-adjusted estimators with `rho = 0`, one fixed population per `n`.
///
/// Intervals ignore the design (Gaussian with the plug-in variance).
pub fn reproduce_sec81(n_grid: &[usize], reps: usize, seed: u64) -> Result<Vec<Sec81Row>> {
    let a = chi2_quantile(1, ACCEPT_P)?;
    let ests = [EstimatorSpec::Diff, EstimatorSpec::Lin, EstimatorSpec::LinXw];
    let mut rows = Vec::new();
    for &n in n_grid {
        let pop = gen_example1(n, 0.0, seed.wrapping_add(n as u64))?;
        let rep = run_on_population(&pop, &DesignSpec::rem(n / 2, a), &ests, reps, 0.05, seed, false)?;
        for s in rep.estimators {
            rows.push(Sec81Row {
                n,
                estimator: s.estimator,
                mean_ci_length: s.mean_ci_length,
                coverage: s.coverage,
                sampling_sd: s.sampling_sd,
                mean_estimated_se: s.mean_estimated_se,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let t = reproduce_table1(40, 30, 1).unwrap();
        assert_eq!(t.cells.len(), 4);
        let text = t.to_string();
        assert!(text.contains("rho = 0.9") && text.contains("adjusted") && text.contains("unadjusted"));
    }

    #[test]
    fn sec81_rows() {
        let rows = reproduce_sec81(&[20, 40], 20, 3).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.coverage)));
        assert_eq!(rows[0].csv_line().split(',').count(), Sec81Row::csv_header().split(',').count());
    }
}
