use serde::{Deserialize, Serialize};

use crate::design::{DesignKind, DesignSpec, DEFAULT_MAX_ATTEMPTS};
use crate::dists::chi2_quantile;
use crate::error::{Error, Result};
use crate::fpstats::FinitePopulation;

use super::example1::gen_example1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Example1 { n: usize, rho: f64 },
    Csv { path: String, k: usize, j: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKind,
    #[serde(default = "default_r1")]
    pub r1: f64,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Level `p` for `a = chi2_K quantile(p)`.
    #[serde(default)]
    pub threshold_quantile: Option<f64>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
}

fn default_r1() -> f64 {
    0.5
}

fn default_max_attempts() -> u64 {
    DEFAULT_MAX_ATTEMPTS
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Difference in means.
    Diff,
    /// Lin's estimator on the analysis covariates `w`.
    Lin,
    /// Lin's estimator on the design and analysis covariates together.
    LinXw,
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Diff => "diff",
            EstimatorSpec::Lin => "lin",
            EstimatorSpec::LinXw => "lin_xw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "diff" => Ok(EstimatorSpec::Diff),
            "lin" => Ok(EstimatorSpec::Lin),
            "lin_xw" => Ok(EstimatorSpec::LinXw),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator {other:?} (expected diff, lin or lin_xw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub design: DesignConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub master_seed: u64,
    /// Whether intervals use the design covariates and threshold.
    #[serde(default)]
    pub knows_design: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} not in (0, 1)", self.alpha));
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        let d = &self.design;
        if !(d.r1 > 0.0 && d.r1 < 1.0) {
            return bad(format!("r1 = {} not in (0, 1)", d.r1));
        }
        if d.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        match (d.kind, d.threshold, d.threshold_quantile) {
            (DesignKind::Cre, None, None) => {}
            (DesignKind::Cre, _, _) => return bad("a threshold only applies to rem designs".into()),
            (DesignKind::Rem, Some(a), None) if a > 0.0 => {}
            (DesignKind::Rem, None, Some(p)) if p > 0.0 && p < 1.0 => {}
            (DesignKind::Rem, _, _) => {
                return bad("rem needs exactly one of threshold > 0 or threshold_quantile in (0, 1)".into())
            }
        }
        if let ModelSpec::Example1 { n, rho } = self.model {
            if n < 4 {
                return bad(format!("n = {n} is too small"));
            }
            if rho.is_nan() || rho.abs() > 1.0 {
                return bad(format!("rho = {rho} must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    pub fn population(&self) -> Result<FinitePopulation> {
        match &self.model {
            ModelSpec::Example1 { n, rho } => gen_example1(*n, *rho, self.master_seed),
            ModelSpec::Csv { path, k, j } => FinitePopulation::from_csv(path, *k, *j),
        }
    }

    /// Resolve the design against a population of size `n` with `k` design covariates.
    pub fn design_spec(&self, n: usize, k: usize) -> Result<DesignSpec> {
        let n1f = self.design.r1 * n as f64;
        let n1 = n1f.round() as usize;
        if (n1f - n1 as f64).abs() > 1e-9 || n1 == 0 || n1 >= n {
            return Err(Error::InvalidArgument(format!(
                "r1 = {} does not give an integer treated count for n = {n}",
                self.design.r1
            )));
        }
        let spec = match self.design.kind {
            DesignKind::Cre => DesignSpec::cre(n1),
            DesignKind::Rem => {
                let a = match (self.design.threshold, self.design.threshold_quantile) {
                    (Some(a), _) => a,
                    (None, Some(p)) => chi2_quantile(k.max(1), p)?,
                    (None, None) => unreachable!("validated"),
                };
                DesignSpec::rem(n1, a)
            }
        };
        Ok(spec.with_max_attempts(self.design.max_attempts))
    }
}
