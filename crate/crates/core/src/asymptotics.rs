//! Asymptotic sampling laws of adjusted estimators, their decomposition,
//! optimal coefficients and the percentage gains from design and analysis.

use nalgebra::DVector;
use serde::Serialize;

use crate::design::DesignSpec;
use crate::dists::{v_constant, MixtureDist};
use crate::error::{Error, Result};
use crate::fpstats::{adjusted_moments, summarize, FinitePopulation, PopulationSummary};
use crate::linalg::{quad_form, spd_inverse};

/// `(K, a)` usable by [`MixtureDist`]; no design covariates means no truncation.
pub fn law_params(k: usize, a: f64) -> (usize, f64) {
    if k == 0 {
        (1, f64::INFINITY)
    } else {
        (k, a)
    }
}

fn treated_fraction(pop: &FinitePopulation, design: &DesignSpec) -> f64 {
    design.n1 as f64 / pop.n() as f64
}

/// Asymptotic law of `sqrt(n) (tauhat(beta1, beta0) - tau)` under `design`.
pub fn sampling_distribution(
    pop: &FinitePopulation,
    design: &DesignSpec,
    beta1: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<MixtureDist> {
    let r1 = treated_fraction(pop, design);
    let (v, r2) = adjusted_moments(pop, r1, beta1, beta0)?;
    let (k, a) = law_params(pop.k(), design.threshold());
    MixtureDist::new(v, r2, k, a)
}

/// [`sampling_distribution`] for the estimator indexed by `gamma` alone.
pub fn sampling_distribution_gamma(
    pop: &FinitePopulation,
    design: &DesignSpec,
    gamma: &DVector<f64>,
) -> Result<MixtureDist> {
    sampling_distribution(pop, design, gamma, gamma)
}

/// Squared coefficients of `eps` and `L_{K,a}` written through the projected
/// and residual pieces of `gamma = r0 beta1 + r1 beta0`.
pub fn decompose(
    pop: &FinitePopulation,
    design: &DesignSpec,
    beta1: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<(f64, f64)> {
    let s = summarize(pop, treated_fraction(pop, design))?;
    if beta1.len() != pop.j() || beta0.len() != pop.j() {
        return Err(Error::Dimension(format!("coefficients for J = {}", pop.j())));
    }
    let gamma = beta1 * s.r0() + beta0 * s.r1;
    Ok(decompose_gamma(&s, &gamma))
}

pub fn decompose_gamma(s: &PopulationSummary, gamma: &DVector<f64>) -> (f64, f64) {
    let rr = s.r1 * s.r0();
    let v = s.v_tautau;
    let dr = gamma - &s.gamma_res;
    let dp = gamma - &s.gamma_proj;
    let eps2 = v * (1.0 - s.r2_tau_x) * (1.0 - s.r2_res) + quad_form(&dr, &s.s2w_minus_x) / rr;
    let l2 = v * s.r2_tau_x * (1.0 - s.r2_proj) + quad_form(&dp, &s.s2w_given_x) / rr;
    (eps2, l2)
}

/// `gamma_tilde`, the S-optimal coefficient when one covariate set spans the other.
pub fn s_optimal_gamma(pop: &FinitePopulation, r1: f64) -> Result<DVector<f64>> {
    Ok(summarize(pop, r1)?.gamma_tilde)
}

/// Coefficient minimizing the asymptotic variance under ReM with `(k, a)`.
pub fn min_variance_gamma(pop: &FinitePopulation, r1: f64, k: usize, a: f64) -> Result<DVector<f64>> {
    let s = summarize(pop, r1)?;
    let (k, a) = law_params(k, a);
    let v = v_constant(k, a);
    let m = &s.s2w_minus_x + &s.s2w_given_x * v;
    let inv = spd_inverse(&m, "S2_{w\\x} + v S2_{w|x}")?;
    Ok(inv * (&s.s2w_minus_x * &s.gamma_res + &s.s2w_given_x * &s.gamma_proj * v))
}

/// Whether adjusting with `gamma_tilde` beats the unadjusted estimator under ReM.
pub fn adjustment_helps(pop: &FinitePopulation, r1: f64) -> Result<bool> {
    let s = summarize(pop, r1)?;
    let (_, r2_tilde) = adjusted_moments(pop, r1, &s.beta1_tilde, &s.beta0_tilde)?;
    Ok(s.r2_tau_w + (1.0 - s.r2_tau_w) * r2_tilde >= s.r2_tau_x - 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Analysis covariates span the design covariates.
    AnalyzerRicher,
    /// Design covariates span the analysis covariates.
    DesignerRicher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Analyzer,
    Designer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum QrForm {
    Zero,
    /// `1 - factor * q(num) / q(den)` with `q` the quantile of a unit-scale law.
    Ratio { factor: f64, num: MixtureDist, den: MixtureDist },
}

/// Closed-form percentage reductions in variance and quantile-range length.
#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub pct_var_reduction: f64,
    /// The R² the reductions are nondecreasing in.
    pub monotone_in: &'static str,
    qr: QrForm,
}

impl GainReport {
    fn zero(monotone_in: &'static str) -> Self {
        Self { pct_var_reduction: 0.0, monotone_in, qr: QrForm::Zero }
    }

    pub fn pct_qr_reduction(&self, alpha: f64) -> Result<f64> {
        match self.qr {
            QrForm::Zero => Ok(0.0),
            QrForm::Ratio { factor, num, den } => {
                let p = 1.0 - alpha / 2.0;
                Ok(1.0 - factor * num.quantile(p)? / den.quantile(p)?)
            }
        }
    }
}

/// `q(rho2)`'s law: `sqrt(1 - rho2) eps + |rho| L_{K,a}`.
fn unit_law(rho2: f64, k: usize, a: f64) -> Result<MixtureDist> {
    let (k, a) = law_params(k, a);
    MixtureDist::new(1.0, rho2.clamp(0.0, 1.0), k, a)
}

fn check_scenario(pop: &FinitePopulation, scenario: Scenario) -> Result<()> {
    let ok = match scenario {
        Scenario::AnalyzerRicher => pop.w_spans_x(),
        Scenario::DesignerRicher => pop.x_spans_w(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition(match scenario {
            Scenario::AnalyzerRicher => "analysis covariates w do not span design covariates x".into(),
            Scenario::DesignerRicher => "design covariates x do not span analysis covariates w".into(),
        }))
    }
}

/// Gains in sampling precision from adjusting with `gamma_tilde` (analyzer)
/// or from rerandomizing (designer).
pub fn gains_sampling(
    pop: &FinitePopulation,
    r1: f64,
    k: usize,
    a: f64,
    scenario: Scenario,
    role: Role,
) -> Result<GainReport> {
    check_scenario(pop, scenario)?;
    let s = summarize(pop, r1)?;
    let v = v_constant(law_params(k, a).0, law_params(k, a).1);
    let (rw, rx, rho2) = (s.r2_tau_w, s.r2_tau_x, s.rho2_x_minus_w);
    let den = 1.0 - (1.0 - v) * rx;
    Ok(match (scenario, role) {
        (Scenario::AnalyzerRicher, Role::Analyzer) => GainReport {
            pct_var_reduction: (rw - (1.0 - v) * rx) / den,
            monotone_in: "r2_tau_w",
            qr: QrForm::Ratio {
                factor: (1.0 - rw).sqrt(),
                num: unit_law(0.0, k, a)?,
                den: unit_law(rx, k, a)?,
            },
        },
        (Scenario::AnalyzerRicher, Role::Designer) => GainReport::zero("r2_tau_x"),
        (Scenario::DesignerRicher, Role::Analyzer) => GainReport {
            pct_var_reduction: v * rw / den,
            monotone_in: "r2_tau_w",
            qr: QrForm::Ratio {
                factor: (1.0 - rw).sqrt(),
                num: unit_law(rho2, k, a)?,
                den: unit_law(rx, k, a)?,
            },
        },
        (Scenario::DesignerRicher, Role::Designer) => GainReport {
            pct_var_reduction: (1.0 - v) * rho2,
            monotone_in: "r2_tau_x",
            qr: QrForm::Ratio { factor: 1.0, num: unit_law(rho2, k, a)?, den: unit_law(0.0, k, a)? },
        },
    })
}

/// Gains in estimated precision, comparing probability limits of the
/// estimated distributions.
///
/// With `knows_design` the analyzer must also hold covariates spanning `x`.
pub fn gains_estimated(
    pop: &FinitePopulation,
    r1: f64,
    k: usize,
    a: f64,
    knows_design: bool,
    role: Role,
) -> Result<GainReport> {
    if role == Role::Designer {
        return Ok(GainReport::zero("r2_tau_w"));
    }
    let s = summarize(pop, r1)?;
    let kappa = s.kappa();
    let (rw, rx) = (s.r2_tau_w, s.r2_tau_x);
    if knows_design {
        check_scenario(pop, Scenario::AnalyzerRicher)?;
        let v = v_constant(law_params(k, a).0, law_params(k, a).1);
        Ok(GainReport {
            pct_var_reduction: (rw - (1.0 - v) * rx) / (kappa - (1.0 - v) * rx),
            monotone_in: "r2_tau_w",
            qr: QrForm::Ratio {
                factor: (1.0 - rw / kappa).max(0.0).sqrt(),
                num: unit_law(0.0, k, a)?,
                den: unit_law(rx / kappa, k, a)?,
            },
        })
    } else {
        let g = MixtureDist::gaussian(1.0);
        Ok(GainReport {
            pct_var_reduction: rw / kappa,
            monotone_in: "r2_tau_w",
            qr: QrForm::Ratio { factor: (1.0 - rw / kappa).max(0.0).sqrt(), num: g, den: g },
        })
    }
}
