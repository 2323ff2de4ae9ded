//! Estimated distributions, confidence intervals and their probability limits.

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::asymptotics::law_params;
use crate::design::DesignSpec;
use crate::dists::{mixture_quantile, MixtureDist};
use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::fpstats::{adjusted_moments, summarize, FinitePopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The analyzer uses the design covariates and threshold.
    FullKnowledge,
    /// The analyzer pretends the design was complete randomization.
    NoKnowledge,
}

/// Estimated law of `sqrt(n) (tauhat - tau)` from one fitted experiment.
pub fn estimated_distribution(fit: &FitResult, knows_design: bool, k: usize, a: f64) -> Result<MixtureDist> {
    if !knows_design {
        return Ok(MixtureDist::gaussian(fit.v_hat));
    }
    let (k, a) = law_params(k, a);
    MixtureDist::new(fit.v_hat.max(0.0), fit.r2_hat_x.clamp(0.0, 1.0), k, a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub tau_hat: f64,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
    pub dist: MixtureDist,
}

impl IntervalReport {
    pub fn contains(&self, tau: f64) -> bool {
        self.lower <= tau && tau <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

impl Serialize for IntervalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Flat {
            tau_hat: f64,
            variance: f64,
            r2_x: f64,
            k: usize,
            a: Option<f64>,
            alpha: f64,
            lower: f64,
            upper: f64,
            method: Method,
        }
        Flat {
            tau_hat: self.tau_hat,
            variance: self.dist.scale2,
            r2_x: self.dist.r2,
            k: self.dist.k,
            a: self.dist.a.is_finite().then_some(self.dist.a),
            alpha: self.alpha,
            lower: self.lower,
            upper: self.upper,
            method: self.method,
        }
        .serialize(s)
    }
}

/// `tauhat +/- n^{-1/2} q_{1 - alpha/2}(dist)`.
pub fn confidence_interval(
    tau_hat: f64,
    dist: &MixtureDist,
    n: usize,
    alpha: f64,
    method: Method,
) -> Result<IntervalReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} not in (0, 1)")));
    }
    let half = mixture_quantile(dist, 1.0 - alpha / 2.0)? / (n as f64).sqrt();
    Ok(IntervalReport {
        tau_hat,
        alpha,
        lower: tau_hat - half,
        upper: tau_hat + half,
        method,
        dist: *dist,
    })
}

/// Probability limit of the estimated distribution for fixed coefficients.
///
/// The plug-in variance converges to `V_tt(beta) + S2_{tau\w}`, and the
/// plug-in numerator of the R² to `V_tt(beta) R2_{tau,x}(beta)`.
pub fn probability_limit(
    pop: &FinitePopulation,
    design: &DesignSpec,
    beta1: &DVector<f64>,
    beta0: &DVector<f64>,
    knows_design: bool,
) -> Result<MixtureDist> {
    let r1 = design.n1 as f64 / pop.n() as f64;
    let s = summarize(pop, r1)?;
    let (v, r2) = adjusted_moments(pop, r1, beta1, beta0)?;
    let total = v + s.s2_tau_minus_w;
    if !knows_design {
        return Ok(MixtureDist::gaussian(total));
    }
    let r2_lim = if total > 0.0 { (v * r2 / total).clamp(0.0, 1.0) } else { 0.0 };
    let (k, a) = law_params(pop.k(), design.threshold());
    MixtureDist::new(total, r2_lim, k, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fit(v: f64, r2: f64) -> FitResult {
        FitResult { tau_hat: 1.0, beta1_hat: vec![], beta0_hat: vec![], v_hat: v, r2_hat_x: r2, v_hw: v }
    }

    #[test]
    fn partial_knowledge_is_gaussian() {
        let d = estimated_distribution(&fit(2.0, 0.6), false, 2, 0.3).unwrap();
        assert!(d.is_gaussian());
        assert_eq!(d.scale2, 2.0);
    }

    #[test]
    fn branches_agree_at_infinite_threshold() {
        let f = fit(2.0, 0.6);
        let a = estimated_distribution(&f, true, 2, f64::INFINITY).unwrap();
        let b = estimated_distribution(&f, false, 2, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(a.quantile(0.975).unwrap(), b.quantile(0.975).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_interval() {
        let ci = confidence_interval(0.5, &MixtureDist::gaussian(4.0), 100, 0.05, Method::NoKnowledge).unwrap();
        assert_abs_diff_eq!(ci.upper - 0.5, 1.959_963_984_540_054 * 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.upper - ci.tau_hat, ci.tau_hat - ci.lower, epsilon = 1e-12);
    }

    #[test]
    fn interval_width_nonincreasing_in_r2() {
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let d = MixtureDist::new(1.0, i as f64 / 10.0, 1, 0.5).unwrap();
            let w = confidence_interval(0.0, &d, 50, 0.1, Method::FullKnowledge).unwrap().width();
            assert!(w <= prev + 1e-12);
            prev = w;
        }
    }

    #[test]
    fn json_schema() {
        let ci = confidence_interval(0.5, &MixtureDist::gaussian(4.0), 100, 0.05, Method::NoKnowledge).unwrap();
        let v = serde_json::to_value(&ci).unwrap();
        for key in ["tau_hat", "variance", "r2_x", "k", "a", "alpha", "lower", "upper", "method"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["a"].is_null());
        assert_eq!(v["method"], "no_knowledge");
    }
}
