use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// `P(chi2_k <= x)`. `k = 0` is the point mass at zero.
pub fn chi2_cdf(k: usize, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if k == 0 {
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(k as f64 / 2.0, x / 2.0)
}

pub fn chi2_pdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return if x == 0.0 && k == 2 { 0.5 } else { 0.0 };
    }
    let h = k as f64 / 2.0;
    ((h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)).exp()
}

/// Inverse of [`chi2_cdf`], accurate to `1e-12` in probability.
pub fn chi2_quantile(k: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("chi2 quantile level {p} not in (0, 1)")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("chi2 degrees of freedom must be positive".into()));
    }
    let mut lo = 0.0;
    let mut hi = (k as f64).max(1.0);
    while chi2_cdf(k, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    // Safeguarded Newton: fall back to bisection whenever a step leaves the bracket.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(k, x) - p;
        if f.abs() <= 1e-12 * p.min(1.0 - p).max(1e-300) || hi - lo <= 1e-15 * hi {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(k, x);
        let step = if d > 0.0 { x - f / d } else { f64::NAN };
        x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_degrees_of_freedom_closed_form() {
        for &x in &[0.01, 1.386_294, 4.0, 20.0] {
            assert_abs_diff_eq!(chi2_cdf(2, x), 1.0 - (-x / 2.0).exp(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(chi2_cdf(2, 1.386_294), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn edges() {
        assert_eq!(chi2_cdf(3, 0.0), 0.0);
        assert_eq!(chi2_cdf(3, -1.0), 0.0);
        assert_eq!(chi2_cdf(3, f64::INFINITY), 1.0);
        assert!(chi2_quantile(1, 0.0).is_err());
        assert!(chi2_quantile(1, 1.0).is_err());
    }

    #[test]
    fn quantile_inverts() {
        for k in [1, 2, 3, 5, 10, 40] {
            for &p in &[1e-6, 0.001, 0.05, 0.5, 0.95, 0.999_999] {
                let q = chi2_quantile(k, p).unwrap();
                assert_abs_diff_eq!(chi2_cdf(k, q), p, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn one_df_lower_tail_matches_normal() {
        // P(chi2_1 <= q) = 2 Phi(sqrt q) - 1
        let q = chi2_quantile(1, 0.001).unwrap();
        let z = crate::dists::norm_quantile(0.5005);
        assert_abs_diff_eq!(q, z * z, epsilon = 1e-12);
    }

    #[test]
    fn pdf_integrates_to_cdf() {
        let (k, b) = (4, 3.0);
        let h = b / 2000.0;
        let s: f64 = (0..2000).map(|i| chi2_pdf(k, (i as f64 + 0.5) * h) * h).sum();
        assert_abs_diff_eq!(s, chi2_cdf(k, b), epsilon = 1e-6);
    }
}
