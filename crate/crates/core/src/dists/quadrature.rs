//! Gauss-Legendre rules and an adaptive driver.

use std::sync::OnceLock;

/// Nodes and weights on `[-1, 1]`, computed by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R128: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        64 => R64.get_or_init(|| gauss_legendre(64)),
        128 => R128.get_or_init(|| gauss_legendre(128)),
        _ => unreachable!("only 64- and 128-point rules are cached"),
    }
}

/// Fixed `n`-point Gauss-Legendre on `[a, b]` (`n` is 64 or 128).
pub fn fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = rule(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * x.iter().zip(w).map(|(xi, wi)| wi * f(c + h * xi)).sum::<f64>()
}

/// Adaptive integral of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Each panel compares the 64- and 128-point rules and bisects on
/// disagreement, to a maximum depth of 40.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let coarse = fixed(f, a, b, 64);
        let fine = fixed(f, a, b, 128);
        if (fine - coarse).abs() <= tol || depth >= 40 {
            return fine;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, tol, 0)
}

/// [`integrate`] over consecutive panels split at `breaks` (sorted, inside `[a, b]`).
pub fn integrate_split<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let share = tol / (pts.len() - 1) as f64;
    pts.windows(2).map(|p| integrate(f, p[0], p[1], share)).sum()
}
