//! Point and variance estimators computed from one realized experiment.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::fpstats::fp_cov;
use crate::linalg::{center_columns, pinv, quad_form, spd_inverse, PINV_RTOL};

/// Observed outcomes, the realized allocation, analysis covariates `w` and,
/// when the analyzer knows them, the design covariates `x`.
#[derive(Debug, Clone)]
pub struct TrialData {
    y: DVector<f64>,
    z: Assignment,
    w: DMatrix<f64>,
    x: Option<DMatrix<f64>>,
    treated: Vec<usize>,
    control: Vec<usize>,
}

impl TrialData {
    pub fn new(
        y: DVector<f64>,
        z: Assignment,
        w: DMatrix<f64>,
        x: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if z.n() != n || w.nrows() != n || x.as_ref().is_some_and(|x| x.nrows() != n) {
            return Err(Error::Dimension(format!(
                "trial data: y {n}, z {}, w {} rows{}",
                z.n(),
                w.nrows(),
                x.as_ref().map(|x| format!(", x {} rows", x.nrows())).unwrap_or_default()
            )));
        }
        let (treated, control): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| z.is_treated(i));
        if treated.is_empty() || control.is_empty() {
            return Err(Error::InvalidArgument("both groups must be nonempty".into()));
        }
        Ok(Self {
            y,
            z,
            w: center_columns(&w),
            x: x.map(|x| center_columns(&x)),
            treated,
            control,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n1(&self) -> usize {
        self.treated.len()
    }

    pub fn n0(&self) -> usize {
        self.control.len()
    }

    pub fn r1(&self) -> f64 {
        self.n1() as f64 / self.n() as f64
    }

    pub fn j(&self) -> usize {
        self.w.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &Assignment {
        &self.z
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn x(&self) -> Option<&DMatrix<f64>> {
        self.x.as_ref()
    }

    fn check_beta(&self, beta1: &DVector<f64>, beta0: &DVector<f64>) -> Result<()> {
        if beta1.len() != self.j() || beta0.len() != self.j() {
            return Err(Error::Dimension(format!(
                "coefficients of length {} and {} for J = {}",
                beta1.len(),
                beta0.len(),
                self.j()
            )));
        }
        Ok(())
    }

    /// `Y_i - beta_{Z_i}^T w_i`.
    fn adjusted(&self, beta1: &DVector<f64>, beta0: &DVector<f64>) -> DVector<f64> {
        let f1 = &self.w * beta1;
        let f0 = &self.w * beta0;
        DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| self.y[i] - if self.z.is_treated(i) { f1[i] } else { f0[i] }),
        )
    }
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

fn entries(v: &DVector<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_iterator(idx.len(), 1, idx.iter().map(|&i| v[i]))
}

fn mean_diff(m: &DMatrix<f64>, t: &[usize], c: &[usize]) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|col| {
            t.iter().map(|&i| col[i]).sum::<f64>() / t.len() as f64
                - c.iter().map(|&i| col[i]).sum::<f64>() / c.len() as f64
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub tau_hat: f64,
    pub beta1_hat: Vec<f64>,
    pub beta0_hat: Vec<f64>,
    pub v_hat: f64,
    pub r2_hat_x: f64,
    pub v_hw: f64,
}

/// `(tauhat, tauhat_w, tauhat_x)`: treated-minus-control mean differences.
pub fn diff_in_means(d: &TrialData) -> (f64, DVector<f64>, Option<DVector<f64>>) {
    let y = DMatrix::from_column_slice(d.n(), 1, d.y.as_slice());
    let tau = mean_diff(&y, &d.treated, &d.control)[0];
    let tau_w = mean_diff(&d.w, &d.treated, &d.control);
    let tau_x = d.x.as_ref().map(|x| mean_diff(x, &d.treated, &d.control));
    (tau, tau_w, tau_x)
}

/// `tauhat - (r0 beta1 + r1 beta0)^T tauhat_w`.
pub fn adjusted_estimate(d: &TrialData, beta1: &DVector<f64>, beta0: &DVector<f64>) -> Result<f64> {
    d.check_beta(beta1, beta0)?;
    let (tau, tau_w, _) = diff_in_means(d);
    let r1 = d.r1();
    let gamma = beta1 * (1.0 - r1) + beta0 * r1;
    Ok(tau - gamma.dot(&tau_w))
}

/// Within-group OLS slope of `y` on `w` (with intercept).
fn group_slope(d: &TrialData, idx: &[usize], label: &str) -> Result<DVector<f64>> {
    let w = rows(&d.w, idx);
    let y = entries(&d.y, idx);
    if idx.len() < d.j() + 1 {
        return Err(Error::Singular(format!("within-group Gram of w ({label})")));
    }
    let wc = center_columns(&w);
    let gram = wc.transpose() * &wc;
    let inv = spd_inverse(&gram, &format!("within-group Gram of w ({label})"))?;
    Ok((inv * (wc.transpose() * center_columns(&y))).column(0).into_owned())
}

/// Sample-moment plug-in for `(V_tt(beta1, beta0), R2_{tau,x}(beta1, beta0))`.
///
/// The variance is clipped at 0 and the R² to `[0, 1]`; the R² is 0 when
/// design covariates are not available.
pub fn neyman_variance(d: &TrialData, beta1: &DVector<f64>, beta0: &DVector<f64>) -> Result<(f64, f64)> {
    d.check_beta(beta1, beta0)?;
    if d.n1() < 2 || d.n0() < 2 {
        return Err(Error::InvalidArgument("each group needs at least 2 units".into()));
    }
    let r1 = d.r1();
    let r0 = 1.0 - r1;
    let adj = d.adjusted(beta1, beta0);
    let a1 = entries(&adj, &d.treated);
    let a0 = entries(&adj, &d.control);
    let s2_1 = fp_cov(&a1, &a1)?[(0, 0)];
    let s2_0 = fp_cov(&a0, &a0)?[(0, 0)];

    // Difference of within-group covariances with a covariate block, as a
    // vector, plus the full-sample covariance of that block.
    let cross = |m: &DMatrix<f64>| -> Result<DVector<f64>> {
        let c1 = fp_cov(&rows(m, &d.treated), &a1)?;
        let c0 = fp_cov(&rows(m, &d.control), &a0)?;
        Ok((c1 - c0).column(0).into_owned())
    };
    let mut v = s2_1 / r1 + s2_0 / r0;
    if d.j() > 0 {
        let s2w_inv = spd_inverse(&fp_cov(&d.w, &d.w)?, "S2w")?;
        v -= quad_form(&cross(&d.w)?, &s2w_inv);
    }
    let n = d.n() as f64;
    let scale = a1.norm_squared() / (n * r1) + a0.norm_squared() / (n * r0);
    if v <= 1e-12 * scale {
        return Ok((v.max(0.0), 0.0));
    }

    let r2 = match d.x.as_ref() {
        Some(x) if x.ncols() > 0 => {
            let proj = |idx: &[usize], a: &DMatrix<f64>| -> Result<f64> {
                let xz = rows(x, idx);
                let s_xa = fp_cov(&xz, a)?.column(0).into_owned();
                let s2xz = fp_cov(&xz, &xz)?;
                let scale = crate::linalg::norm_inf(&s2xz);
                Ok(quad_form(&s_xa, &pinv(&s2xz, PINV_RTOL, scale)))
            };
            let s2x_inv = spd_inverse(&fp_cov(x, x)?, "S2x")?;
            let num = proj(&d.treated, &a1)? / r1 + proj(&d.control, &a0)? / r0
                - quad_form(&cross(x)?, &s2x_inv);
            (num / v).clamp(0.0, 1.0)
        }
        _ => 0.0,
    };
    Ok((v, r2))
}

/// Regressors `(1, Z, w, Z w)` of the fully interacted OLS.
fn interaction_design(d: &TrialData) -> DMatrix<f64> {
    let (n, j) = (d.n(), d.j());
    let mut u = DMatrix::zeros(n, 2 + 2 * j);
    for i in 0..n {
        let zi = if d.z.is_treated(i) { 1.0 } else { 0.0 };
        u[(i, 0)] = 1.0;
        u[(i, 1)] = zi;
        for c in 0..j {
            u[(i, 2 + c)] = d.w[(i, c)];
            u[(i, 2 + j + c)] = zi * d.w[(i, c)];
        }
    }
    u
}

/// Coefficients and residuals of the OLS of `y` on `(1, Z, w, Z w)`.
pub fn interaction_ols(d: &TrialData) -> Result<(DVector<f64>, DVector<f64>)> {
    let u = interaction_design(d);
    let gram_inv = spd_inverse(&(u.transpose() * &u), "G")?;
    let coef = gram_inv * (u.transpose() * &d.y);
    let resid = &d.y - &u * &coef;
    Ok((coef, resid))
}

/// Huber-White (HC0) variance of the `Z` coefficient in the interacted OLS,
/// scaled for `sqrt(n) (tauhat - tau)`.
pub fn huber_white(d: &TrialData) -> Result<f64> {
    let u = interaction_design(d);
    let n = d.n() as f64;
    let g = u.transpose() * &u / n;
    let g_inv = spd_inverse(&g, "G")?;
    let coef = &g_inv * (u.transpose() * &d.y) / n;
    let resid = &d.y - &u * &coef;
    let mut weighted = u.clone();
    for (mut row, e) in weighted.row_iter_mut().zip(resid.iter()) {
        row *= e * e;
    }
    let h = u.transpose() * weighted / n;
    let sandwich = &g_inv * h * &g_inv;
    Ok(sandwich[(1, 1)].max(0.0))
}

/// Lin's estimator: group-specific OLS slopes plugged into the adjusted
/// estimator, with both variance estimates.
pub fn lin_fit(d: &TrialData) -> Result<FitResult> {
    let beta1 = group_slope(d, &d.treated, "treated")?;
    let beta0 = group_slope(d, &d.control, "control")?;
    let tau_hat = adjusted_estimate(d, &beta1, &beta0)?;
    let (v_hat, r2_hat_x) = neyman_variance(d, &beta1, &beta0)?;
    let v_hw = huber_white(d)?;
    Ok(FitResult {
        tau_hat,
        beta1_hat: beta1.as_slice().to_vec(),
        beta0_hat: beta0.as_slice().to_vec(),
        v_hat,
        r2_hat_x,
        v_hw,
    })
}

/// The adjusted estimator at fixed coefficients, with its plug-in variance.
///
/// `v_hw` is the Huber-White variance from regressing the adjusted outcomes
/// `Y_i - beta_{Z_i}^T w_i` on `(1, Z)`, whose `Z` coefficient is `tau_hat`.
pub fn fixed_fit(d: &TrialData, beta1: &DVector<f64>, beta0: &DVector<f64>) -> Result<FitResult> {
    let tau_hat = adjusted_estimate(d, beta1, beta0)?;
    let (v_hat, r2_hat_x) = neyman_variance(d, beta1, beta0)?;
    let bare = TrialData::new(d.adjusted(beta1, beta0), d.z.clone(), DMatrix::zeros(d.n(), 0), None)?;
    let v_hw = huber_white(&bare)?;
    Ok(FitResult {
        tau_hat,
        beta1_hat: beta1.as_slice().to_vec(),
        beta0_hat: beta0.as_slice().to_vec(),
        v_hat,
        r2_hat_x,
        v_hw,
    })
}
