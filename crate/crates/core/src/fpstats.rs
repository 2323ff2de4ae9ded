//! Finite-population moments and the projection quantities built from them.
//!
//! Everything here is a deterministic function of the fixed potential
//! outcomes and covariates; covariances use the `n - 1` denominator.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, norm_inf, pinv, quad_form, spd_inverse, PINV_RTOL};

/// Relative level below which a variance is treated as exactly zero.
const DEGENERATE_RTOL: f64 = 1e-12;

/// Relative residual trace below which one covariate set is taken to span another.
pub const SPAN_RTOL: f64 = 1e-8;

/// `(n-1)^{-1} sum_i (a_i - abar)(b_i - bbar)^T`.
pub fn fp_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "fp_cov: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let n = a.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("fp_cov needs at least 2 rows, got {n}")));
    }
    Ok(center_columns(a).transpose() * center_columns(b) / (n as f64 - 1.0))
}

fn var(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let m = v.mean();
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Potential outcomes plus design (`x`) and analysis (`w`) covariates.
///
/// Covariate columns are recentered on construction.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    y1: DVector<f64>,
    y0: DVector<f64>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    s2x: DMatrix<f64>,
    s2w: DMatrix<f64>,
    s2x_inv: DMatrix<f64>,
    s2w_inv: DMatrix<f64>,
}

impl FinitePopulation {
    pub fn new(
        y1: DVector<f64>,
        y0: DVector<f64>,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y1.len();
        if y0.len() != n || x.nrows() != n || w.nrows() != n {
            return Err(Error::Dimension(format!(
                "population: y1 {}, y0 {}, x {} rows, w {} rows",
                n,
                y0.len(),
                x.nrows(),
                w.nrows()
            )));
        }
        let k = x.ncols();
        let j = w.ncols();
        if n < k.max(j) + 2 {
            return Err(Error::InvalidArgument(format!(
                "population of size {n} is too small for K = {k}, J = {j}"
            )));
        }
        if y1.iter().chain(y0.iter()).chain(x.iter()).chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("population contains non-finite values".into()));
        }
        let x = center_columns(&x);
        let w = center_columns(&w);
        let s2x = fp_cov(&x, &x)?;
        let s2w = fp_cov(&w, &w)?;
        let s2x_inv = spd_inverse(&s2x, "S2x")?;
        let s2w_inv = spd_inverse(&s2w, "S2w")?;
        Ok(Self { y1, y0, x, w, s2x, s2w, s2x_inv, s2w_inv })
    }

    /// Load from a CSV with header `y1,y0,x1..xK,w1..wJ`, in that order.
    pub fn from_csv(path: impl AsRef<Path>, k: usize, j: usize) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(f, k, j)
    }

    pub fn from_reader(rdr: impl Read, k: usize, j: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
        let expected: Vec<String> = ["y1".to_string(), "y0".to_string()]
            .into_iter()
            .chain((1..=k).map(|i| format!("x{i}")))
            .chain((1..=j).map(|i| format!("w{i}")))
            .collect();
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != expected {
            return Err(Error::Format(format!(
                "expected columns [{}], found [{}]",
                expected.join(","),
                headers.join(",")
            )));
        }
        let width = expected.len();
        let mut rows: Vec<f64> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Format(format!("row {}: column {} is not a number: {field:?}", line + 1, expected[c]))
                })?;
                rows.push(v);
            }
        }
        let n = rows.len() / width;
        let m = DMatrix::from_row_slice(n, width, &rows);
        Self::new(
            m.column(0).into_owned(),
            m.column(1).into_owned(),
            m.columns(2, k).into_owned(),
            m.columns(2 + k, j).into_owned(),
        )
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn j(&self) -> usize {
        self.w.ncols()
    }

    pub fn y1(&self) -> &DVector<f64> {
        &self.y1
    }

    pub fn y0(&self) -> &DVector<f64> {
        &self.y0
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn s2x(&self) -> &DMatrix<f64> {
        &self.s2x
    }

    pub fn s2w(&self) -> &DMatrix<f64> {
        &self.s2w
    }

    pub fn s2x_inv(&self) -> &DMatrix<f64> {
        &self.s2x_inv
    }

    pub fn s2w_inv(&self) -> &DMatrix<f64> {
        &self.s2w_inv
    }

    /// Average treatment effect.
    pub fn tau(&self) -> f64 {
        self.y1.mean() - self.y0.mean()
    }

    /// `S2_{w|x}`: covariance of the projection of `w` on `x`.
    pub fn s2w_given_x(&self) -> DMatrix<f64> {
        let sxw = self.sxw();
        sxw.transpose() * &self.s2x_inv * sxw
    }

    /// `S2_{x|w}`: covariance of the projection of `x` on `w`.
    pub fn s2x_given_w(&self) -> DMatrix<f64> {
        let sxw = self.sxw();
        &sxw * &self.s2w_inv * sxw.transpose()
    }

    pub fn sxw(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.w / (self.n() as f64 - 1.0)
    }

    /// Condition under which `w` linearly spans `x`.
    pub fn w_spans_x(&self) -> bool {
        if self.k() == 0 {
            return true;
        }
        let resid = &self.s2x - self.s2x_given_w();
        resid.trace() <= SPAN_RTOL * self.s2x.trace()
    }

    /// Condition under which `x` linearly spans `w`.
    pub fn x_spans_w(&self) -> bool {
        if self.j() == 0 {
            return true;
        }
        let resid = &self.s2w - self.s2w_given_x();
        resid.trace() <= SPAN_RTOL * self.s2w.trace()
    }

    fn check_r1(&self, r1: f64) -> Result<()> {
        let n1 = r1 * self.n() as f64;
        if !(r1 > 0.0 && r1 < 1.0) || (n1 - n1.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "r1 = {r1} does not give an integer treated count for n = {}",
                self.n()
            )));
        }
        Ok(())
    }

    fn adjusted_outcomes(
        &self,
        beta1: &DVector<f64>,
        beta0: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if beta1.len() != self.j() || beta0.len() != self.j() {
            return Err(Error::Dimension(format!(
                "coefficients of length {} and {} for J = {}",
                beta1.len(),
                beta0.len(),
                self.j()
            )));
        }
        Ok((&self.y1 - &self.w * beta1, &self.y0 - &self.w * beta0))
    }
}

/// The `tau`, `x`, `w` blocks of the joint randomization covariance, for a
/// given pair of (possibly adjusted) potential-outcome vectors.
struct Blocks {
    v_tt: f64,
    v_tx: DVector<f64>,
    v_tw: DVector<f64>,
    /// Scale used to decide whether `v_tt` is numerically zero.
    scale: f64,
}

fn blocks(pop: &FinitePopulation, a1: &DVector<f64>, a0: &DVector<f64>, r1: f64) -> Blocks {
    let r0 = 1.0 - r1;
    let nm1 = pop.n() as f64 - 1.0;
    let t = a1 - a0;
    let v_tt = var(a1) / r1 + var(a0) / r0 - var(&t);
    let cross = |m: &DMatrix<f64>| (m.transpose() * a1 / r1 + m.transpose() * a0 / r0) / nm1;
    let n = pop.n() as f64;
    let scale = a1.norm_squared() / (n * r1) + a0.norm_squared() / (n * r0);
    Blocks { v_tt, v_tx: cross(&pop.x), v_tw: cross(&pop.w), scale }
}

impl Blocks {
    fn degenerate(&self) -> bool {
        self.v_tt <= DEGENERATE_RTOL * self.scale
    }

    /// `V_tx V_xx^{-1} V_xt / V_tt`, or 0 when undefined.
    fn r2_x(&self, pop: &FinitePopulation, r1: f64) -> f64 {
        if pop.k() == 0 || self.degenerate() {
            return 0.0;
        }
        let num = r1 * (1.0 - r1) * quad_form(&self.v_tx, &pop.s2x_inv);
        (num / self.v_tt).clamp(0.0, 1.0)
    }

    fn r2_w(&self, pop: &FinitePopulation, r1: f64) -> f64 {
        if pop.j() == 0 || self.degenerate() {
            return 0.0;
        }
        let num = r1 * (1.0 - r1) * quad_form(&self.v_tw, &pop.s2w_inv);
        (num / self.v_tt).clamp(0.0, 1.0)
    }
}

/// Population-level quantities that parameterize the asymptotic theory.
#[derive(Debug, Clone)]
pub struct PopulationSummary {
    pub n: usize,
    pub r1: f64,
    pub tau: f64,
    pub s2_y1: f64,
    pub s2_y0: f64,
    pub s2_tau: f64,
    pub s2x: DMatrix<f64>,
    pub s2w: DMatrix<f64>,
    pub sxw: DMatrix<f64>,
    pub beta1_tilde: DVector<f64>,
    pub beta0_tilde: DVector<f64>,
    pub gamma_tilde: DVector<f64>,
    pub gamma_proj: DVector<f64>,
    pub gamma_res: DVector<f64>,
    pub r2_tau_x: f64,
    pub r2_tau_w: f64,
    pub r2_proj: f64,
    pub r2_res: f64,
    pub rho2_x_minus_w: f64,
    pub v_tautau: f64,
    pub s2_tau_minus_w: f64,
    pub s2w_given_x: DMatrix<f64>,
    pub s2w_minus_x: DMatrix<f64>,
}

impl PopulationSummary {
    pub fn r0(&self) -> f64 {
        1.0 - self.r1
    }

    /// `1 + S2_{tau\w} / V_tt`, or 1 when `V_tt` is zero.
    pub fn kappa(&self) -> f64 {
        if self.v_tautau > 0.0 {
            1.0 + self.s2_tau_minus_w / self.v_tautau
        } else {
            1.0
        }
    }
}

/// Summarize a population for treated fraction `r1`.
///
/// `gamma_proj` and `gamma_res` minimize their quadratic forms; when the
/// minimizer is not unique the one closest to `gamma_tilde` is returned.
pub fn summarize(pop: &FinitePopulation, r1: f64) -> Result<PopulationSummary> {
    pop.check_r1(r1)?;
    let r0 = 1.0 - r1;
    let rr = r1 * r0;
    let b = blocks(pop, &pop.y1, &pop.y0, r1);
    let degenerate = b.degenerate();
    let v_tautau = if degenerate { 0.0 } else { b.v_tt };
    let r2_tau_x = b.r2_x(pop, r1);
    let r2_tau_w = b.r2_w(pop, r1);

    let nm1 = pop.n() as f64 - 1.0;
    let s_w_y1 = pop.w.transpose() * &pop.y1 / nm1;
    let s_w_y0 = pop.w.transpose() * &pop.y0 / nm1;
    let beta1_tilde = &pop.s2w_inv * s_w_y1;
    let beta0_tilde = &pop.s2w_inv * s_w_y0;

    let sxw = pop.sxw();
    let v_xx_inv = &pop.s2x_inv * rr;
    let v_xw = &sxw / rr;
    let v_ww = &pop.s2w / rr;
    let gamma_tilde = &pop.s2w_inv * &b.v_tw * rr;

    // Projected and residual normal equations.
    let c_p = v_xw.transpose() * &v_xx_inv * &b.v_tx;
    let a_p = v_xw.transpose() * &v_xx_inv * &v_xw;
    let c_r = &b.v_tw - &c_p;
    let a_r = &v_ww - &a_p;
    let ref_scale = norm_inf(&v_ww);
    let a_p_pinv = pinv(&a_p, PINV_RTOL, ref_scale);
    let a_r_pinv = pinv(&a_r, PINV_RTOL, ref_scale);
    let gamma_proj = &gamma_tilde + &a_p_pinv * (&c_p - &a_p * &gamma_tilde);
    let gamma_res = &gamma_tilde + &a_r_pinv * (&c_r - &a_r * &gamma_tilde);

    let ratio = |num: f64, den: f64| {
        if degenerate || den <= DEGENERATE_RTOL * b.scale {
            0.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    };
    let r2_proj = ratio(quad_form(&c_p, &a_p_pinv), v_tautau * r2_tau_x);
    let r2_res = ratio(quad_form(&c_r, &a_r_pinv), v_tautau * (1.0 - r2_tau_x));
    let rho2_x_minus_w = if degenerate || 1.0 - r2_tau_w <= DEGENERATE_RTOL {
        0.0
    } else {
        ((r2_tau_x - r2_tau_w) / (1.0 - r2_tau_w)).clamp(0.0, 1.0)
    };

    let t = &pop.y1 - &pop.y0;
    let s2_tau = var(&t);
    let s_w_tau = pop.w.transpose() * &t / nm1;
    let s2_tau_minus_w = (s2_tau - quad_form(&s_w_tau, &pop.s2w_inv)).max(0.0);

    let s2w_given_x = pop.s2w_given_x();
    let s2w_minus_x = &pop.s2w - &s2w_given_x;

    Ok(PopulationSummary {
        n: pop.n(),
        r1,
        tau: pop.tau(),
        s2_y1: var(&pop.y1),
        s2_y0: var(&pop.y0),
        s2_tau,
        s2x: pop.s2x.clone(),
        s2w: pop.s2w.clone(),
        sxw,
        beta1_tilde,
        beta0_tilde,
        gamma_tilde,
        gamma_proj,
        gamma_res,
        r2_tau_x,
        r2_tau_w,
        r2_proj,
        r2_res,
        rho2_x_minus_w,
        v_tautau,
        s2_tau_minus_w,
        s2w_given_x,
        s2w_minus_x,
    })
}

/// Joint covariance of `sqrt(n) (tauhat - tau, tauhat_x, tauhat_w)` under
/// complete randomization, ordered `tau, x_1..x_K, w_1..w_J`.
pub fn v_matrix(pop: &FinitePopulation, r1: f64) -> Result<DMatrix<f64>> {
    pop.check_r1(r1)?;
    let rr = r1 * (1.0 - r1);
    let (k, j) = (pop.k(), pop.j());
    let b = blocks(pop, &pop.y1, &pop.y0, r1);
    let mut v = DMatrix::zeros(1 + k + j, 1 + k + j);
    v[(0, 0)] = b.v_tt;
    for i in 0..k {
        v[(0, 1 + i)] = b.v_tx[i];
        v[(1 + i, 0)] = b.v_tx[i];
    }
    for i in 0..j {
        v[(0, 1 + k + i)] = b.v_tw[i];
        v[(1 + k + i, 0)] = b.v_tw[i];
    }
    let sxw = pop.sxw();
    v.view_mut((1, 1), (k, k)).copy_from(&(&pop.s2x / rr));
    v.view_mut((1, 1 + k), (k, j)).copy_from(&(&sxw / rr));
    v.view_mut((1 + k, 1), (j, k)).copy_from(&(sxw.transpose() / rr));
    v.view_mut((1 + k, 1 + k), (j, j)).copy_from(&(&pop.s2w / rr));
    Ok(v)
}

/// `(V_tt(beta1, beta0), R2_{tau,x}(beta1, beta0))` for the adjusted
/// potential outcomes `Y(z) - beta_z^T w`.
pub fn adjusted_moments(
    pop: &FinitePopulation,
    r1: f64,
    beta1: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<(f64, f64)> {
    pop.check_r1(r1)?;
    let (a1, a0) = pop.adjusted_outcomes(beta1, beta0)?;
    let b = blocks(pop, &a1, &a0, r1);
    if b.degenerate() {
        return Ok((b.v_tt.max(0.0), 0.0));
    }
    Ok((b.v_tt, b.r2_x(pop, r1)))
}
