use rand::Rng;
use rand_distr::StandardNormal;
use libm::erf;

use super::chi2::chi2_cdf;
use super::normal::{norm_cdf, norm_pdf, norm_quantile};
use super::quadrature::integrate_split;
use crate::error::{Error, Result};

/// Beyond this half-width the density is integrated in `l` directly, on
/// `[-12, 12]`, instead of through `l = sqrt(a) sin(theta)`.
const THETA_MAX_HALF_WIDTH: f64 = 10.0;
const L_CLIP: f64 = 12.0;

/// `L_{K,a}`: the first coordinate of `D ~ N(0, I_K)` given `|D|^2 <= a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    k: usize,
    a: f64,
}

impl TruncatedGaussian {
    pub fn new(k: usize, a: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("truncated Gaussian needs K >= 1".into()));
        }
        if a.is_nan() || a <= 0.0 {
            return Err(Error::InvalidArgument(format!("threshold a = {a} must be positive")));
        }
        Ok(Self { k, a })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn half_width(&self) -> f64 {
        self.a.sqrt()
    }

    /// No truncation: the law is standard normal.
    pub fn is_gaussian(&self) -> bool {
        self.a == f64::INFINITY
    }

    /// `P(chi2_K <= a)`, the acceptance probability of the rejection sampler.
    pub fn normalizer(&self) -> f64 {
        chi2_cdf(self.k, self.a)
    }

    pub fn variance(&self) -> f64 {
        v_constant(self.k, self.a)
    }

    /// Unnormalized density `phi(l) P(chi2_{K-1} <= a - l^2)` given `a - l^2`.
    fn kernel(&self, l: f64, slack: f64) -> f64 {
        if self.k == 1 || self.is_gaussian() {
            norm_pdf(l)
        } else {
            norm_pdf(l) * chi2_cdf(self.k - 1, slack)
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if self.is_gaussian() {
            return norm_pdf(t);
        }
        if t * t > self.a {
            return 0.0;
        }
        self.kernel(t, self.a - t * t) / self.normalizer()
    }

    /// `int_lo^hi g(l) f(l) dl` with `lo <= hi` clamped to the support.
    ///
    /// `breaks` are points in `l` where `g` is rough. `tol` is absolute on
    /// the normalized integral.
    pub(crate) fn integrate_against<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        lo: f64,
        hi: f64,
        breaks: &[f64],
        tol: f64,
    ) -> f64 {
        let s = self.half_width();
        let z = self.normalizer();
        if s <= THETA_MAX_HALF_WIDTH {
            let lo = lo.clamp(-s, s);
            let hi = hi.clamp(-s, s);
            let th = |l: f64| (l / s).clamp(-1.0, 1.0).asin();
            let f = |theta: f64| {
                let (sn, cs) = theta.sin_cos();
                let l = s * sn;
                g(l) * self.kernel(l, self.a * cs * cs) * s * cs
            };
            let mut br: Vec<f64> = breaks.iter().map(|&b| th(b)).collect();
            br.push(0.0);
            integrate_split(&f, th(lo), th(hi), &br, tol * z) / z
        } else {
            let b = s.min(L_CLIP);
            let lo = lo.clamp(-b, b);
            let hi = hi.clamp(-b, b);
            let f = |l: f64| g(l) * self.kernel(l, self.a - l * l);
            let mut br = breaks.to_vec();
            br.push(0.0);
            integrate_split(&f, lo, hi, &br, tol * z) / z
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.is_gaussian() {
            return norm_cdf(t);
        }
        let s = self.half_width();
        if t <= -s {
            return 0.0;
        }
        if t >= s {
            return 1.0;
        }
        if self.k == 1 {
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let es = erf(s * r);
            return (erf(t * r) + es) / (2.0 * es);
        }
        if t < 0.0 {
            return 1.0 - self.cdf(-t);
        }
        0.5 + self.integrate_against(&|_| 1.0, 0.0, t, &[], 1e-14)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {p} not in (0, 1)")));
        }
        if self.is_gaussian() {
            return Ok(norm_quantile(p));
        }
        if p < 0.5 {
            return Ok(-self.quantile(1.0 - p)?);
        }
        Ok(invert(|t| self.cdf(t), |t| self.pdf(t), p, 0.0, self.half_width()))
    }

    /// Rejection sampler; expected cost is `1 / normalizer()` draws of `D`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let d1: f64 = rng.sample(StandardNormal);
            if self.is_gaussian() {
                return d1;
            }
            let mut r2 = d1 * d1;
            for _ in 1..self.k {
                if r2 > self.a {
                    break;
                }
                let d: f64 = rng.sample(StandardNormal);
                r2 += d * d;
            }
            if r2 <= self.a {
                return d1;
            }
        }
    }
}

/// Root of `cdf(t) = p` in `[lo, hi]` to `1e-12` in probability.
///
/// Newton steps on `pdf`, replaced by bisection whenever they would leave
/// the current bracket.
pub(crate) fn invert<C: Fn(f64) -> f64, D: Fn(f64) -> f64>(cdf: C, pdf: D, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(t) - p;
        if f.abs() <= 1e-12 {
            return t;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            return t;
        }
        let d = pdf(t);
        let step = if d > 0.0 { t - f / d } else { f64::NAN };
        t = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    t
}

pub fn trunc_cdf(d: &TruncatedGaussian, t: f64) -> f64 {
    d.cdf(t)
}

pub fn trunc_sample<R: Rng + ?Sized>(d: &TruncatedGaussian, rng: &mut R) -> f64 {
    d.sample(rng)
}

/// `v_{K,a} = Var(L_{K,a}) = P(chi2_{K+2} <= a) / P(chi2_K <= a)`.
pub fn v_constant(k: usize, a: f64) -> f64 {
    if a == f64::INFINITY {
        return 1.0;
    }
    let den = chi2_cdf(k, a);
    if den <= 0.0 {
        // Small-a limit of the ratio.
        return a / (k as f64 + 2.0);
    }
    (chi2_cdf(k + 2, a) / den).min(1.0)
}
