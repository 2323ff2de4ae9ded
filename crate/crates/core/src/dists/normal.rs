use libm::erfc;
use statrs::function::erf::erfc_inv;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile; `p` must lie in `(0, 1)`.
///
/// The `erfc_inv` starting value is refined by two Newton steps on the CDF.
pub fn norm_quantile(p: f64) -> f64 {
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let d = norm_pdf(x);
        if d == 0.0 || !x.is_finite() {
            break;
        }
        // Work in the nearer tail to keep the residual accurate.
        let r = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_cdf(-x) };
        x -= r / d;
    }
    x
}
