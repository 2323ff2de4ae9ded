use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::normal::{norm_cdf, norm_pdf, norm_quantile};
use super::truncated::{invert, v_constant, TruncatedGaussian};
use crate::error::{Error, Result};

/// Below this `1 - r2` the Gaussian part is dropped.
const PURE_L_TOL: f64 = 1e-14;

/// `sqrt(scale2) * (sqrt(1 - r2) eps + sqrt(r2) L_{K,a})` with `eps ~ N(0, 1)`
/// independent of `L_{K,a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureDist {
    pub scale2: f64,
    pub r2: f64,
    pub k: usize,
    /// Threshold; `f64::INFINITY` for no truncation.
    #[serde(with = "crate::serde_inf")]
    pub a: f64,
}

impl MixtureDist {
    pub fn new(scale2: f64, r2: f64, k: usize, a: f64) -> Result<Self> {
        if !scale2.is_finite() || scale2 < 0.0 {
            return Err(Error::InvalidArgument(format!("scale2 = {scale2} must be finite and >= 0")));
        }
        if !(0.0..=1.0).contains(&r2) {
            return Err(Error::InvalidArgument(format!("r2 = {r2} not in [0, 1]")));
        }
        TruncatedGaussian::new(k, a)?;
        Ok(Self { scale2, r2, k, a })
    }

    pub fn gaussian(scale2: f64) -> Self {
        Self { scale2: scale2.max(0.0), r2: 0.0, k: 1, a: f64::INFINITY }
    }

    pub fn is_gaussian(&self) -> bool {
        self.r2 == 0.0 || self.a == f64::INFINITY
    }

    pub fn variance(&self) -> f64 {
        self.scale2 * ((1.0 - self.r2) + self.r2 * v_constant(self.k, self.a))
    }

    /// Squared coefficients of `eps` and `L_{K,a}`.
    pub fn coefficients2(&self) -> (f64, f64) {
        (self.scale2 * (1.0 - self.r2), self.scale2 * self.r2)
    }

    fn trunc(&self) -> TruncatedGaussian {
        TruncatedGaussian::new(self.k, self.a).expect("validated on construction")
    }

    /// CDF of the unit-scale variable `sqrt(1 - r2) eps + sqrt(r2) L`.
    fn std_cdf(&self, c: f64) -> f64 {
        if self.is_gaussian() {
            return norm_cdf(c);
        }
        let l = self.trunc();
        let sig2 = 1.0 - self.r2;
        if sig2 <= PURE_L_TOL {
            return l.cdf(c);
        }
        let (sig, rho) = (sig2.sqrt(), self.r2.sqrt());
        let g = |t: f64| norm_cdf((c - rho * t) / sig);
        l.integrate_against(&g, -f64::INFINITY, f64::INFINITY, &[c / rho], 1e-13)
    }

    fn std_pdf(&self, c: f64) -> f64 {
        if self.is_gaussian() {
            return norm_pdf(c);
        }
        let l = self.trunc();
        let sig2 = 1.0 - self.r2;
        if sig2 <= PURE_L_TOL {
            return l.pdf(c);
        }
        let (sig, rho) = (sig2.sqrt(), self.r2.sqrt());
        let g = |t: f64| norm_pdf((c - rho * t) / sig) / sig;
        l.integrate_against(&g, -f64::INFINITY, f64::INFINITY, &[c / rho], 1e-12)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.scale2 == 0.0 {
            return if t >= 0.0 { 1.0 } else { 0.0 };
        }
        self.std_cdf(t / self.scale2.sqrt())
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let s = self.scale2.sqrt();
        self.std_pdf(t / s) / s
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        mixture_quantile(self, p)
    }

    /// Width of the central `1 - alpha` range.
    pub fn quantile_range(&self, alpha: f64) -> Result<f64> {
        Ok(2.0 * self.quantile(1.0 - alpha / 2.0)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        let l = if self.r2 > 0.0 { self.trunc().sample(rng) } else { 0.0 };
        self.scale2.sqrt() * ((1.0 - self.r2).sqrt() * e + self.r2.sqrt() * l)
    }
}

/// The `p`-th quantile of `m`; a point mass at 0 when `scale2 = 0`.
pub fn mixture_quantile(m: &MixtureDist, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {p} not in (0, 1)")));
    }
    if m.scale2 == 0.0 {
        return Ok(0.0);
    }
    let s = m.scale2.sqrt();
    if m.is_gaussian() {
        return Ok(s * norm_quantile(p));
    }
    if p < 0.5 {
        return Ok(-mixture_quantile(m, 1.0 - p)?);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if 1.0 - m.r2 <= PURE_L_TOL {
        return Ok(s * m.trunc().quantile(p)?);
    }
    let mut hi = norm_quantile(p).max(1e-3);
    while m.std_cdf(hi) < p {
        hi *= 2.0;
    }
    Ok(s * invert(|c| m.std_cdf(c), |c| m.std_pdf(c), p, 0.0, hi))
}
