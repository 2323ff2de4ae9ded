//! Treatment assignment: complete randomization, Mahalanobis rerandomization
//! and exhaustive enumeration.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpstats::FinitePopulation;
use crate::linalg::center_columns;

pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;
pub const ENUMERATION_LIMIT: u128 = 200_000;

/// Relative band around the threshold inside which acceptance is recomputed.
const TIE_RTOL: f64 = 1e-9;

/// A 0/1 allocation; `true` means treated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    z: Vec<bool>,
}

impl Assignment {
    pub fn new(z: Vec<bool>) -> Self {
        Self { z }
    }

    pub fn from_treated(n: usize, treated: &[usize]) -> Self {
        let mut z = vec![false; n];
        for &i in treated {
            z[i] = true;
        }
        Self { z }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n1(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.z
    }

    pub fn to_indicators(&self) -> Vec<u8> {
        self.z.iter().map(|&t| t as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Cre,
    Rem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n1: usize,
    /// Acceptance threshold for ReM, `f64::INFINITY` otherwise.
    #[serde(with = "crate::serde_inf")]
    pub a: f64,
    pub max_attempts: u64,
}

impl DesignSpec {
    pub fn cre(n1: usize) -> Self {
        Self { kind: DesignKind::Cre, n1, a: f64::INFINITY, max_attempts: DEFAULT_MAX_ATTEMPTS }
    }

    pub fn rem(n1: usize, a: f64) -> Self {
        Self { kind: DesignKind::Rem, n1, a, max_attempts: DEFAULT_MAX_ATTEMPTS }
    }

    pub fn with_max_attempts(mut self, max_attempts: u64) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    /// The threshold actually in force; infinite under complete randomization.
    pub fn threshold(&self) -> f64 {
        match self.kind {
            DesignKind::Cre => f64::INFINITY,
            DesignKind::Rem => self.a,
        }
    }
}

/// `M = n r1 r0 tauhat_x^T (S2_x)^{-1} tauhat_x`.
pub fn mahalanobis(pop: &FinitePopulation, z: &Assignment) -> Result<f64> {
    let n = pop.n();
    if z.n() != n {
        return Err(Error::Dimension(format!("assignment of length {} for n = {n}", z.n())));
    }
    let n1 = z.n1();
    if n1 == 0 || n1 == n {
        return Err(Error::InvalidArgument("both groups must be nonempty".into()));
    }
    let k = pop.k();
    let mut m1 = vec![0.0; k];
    let mut m0 = vec![0.0; k];
    for i in 0..n {
        let m = if z.is_treated(i) { &mut m1 } else { &mut m0 };
        for (c, acc) in m.iter_mut().enumerate() {
            *acc += pop.x()[(i, c)];
        }
    }
    let n0 = n - n1;
    let d = nalgebra::DVector::from_iterator(k, (0..k).map(|c| m1[c] / n1 as f64 - m0[c] / n0 as f64));
    let (r1, r0) = (n1 as f64 / n as f64, n0 as f64 / n as f64);
    Ok(n as f64 * r1 * r0 * crate::linalg::quad_form(&d, pop.s2x_inv()))
}

/// Uniform draw over all `C(n, n1)` allocations by a partial Fisher-Yates shuffle.
pub fn draw_cre<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Assignment {
    assert!(n1 > 0 && n1 < n, "need 0 < n1 < n, got n1 = {n1}, n = {n}");
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..n1 {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
    Assignment::from_treated(n, &perm[..n1])
}

/// Rerandomize until `M <= a`; returns the accepted allocation and the number
/// of draws it took.
pub fn draw_rem<R: Rng + ?Sized>(
    pop: &FinitePopulation,
    spec: &DesignSpec,
    rng: &mut R,
) -> Result<(Assignment, u64)> {
    RemSampler::new(pop.x(), spec)?.draw(rng)
}

/// Precomputed state for repeated rerandomization on one covariate matrix.
///
/// Covariates are whitened once, so each attempt only sums the rows picked
/// by a partial shuffle of the smaller group.
#[derive(Debug, Clone)]
pub struct RemSampler {
    n: usize,
    n1: usize,
    k: usize,
    a: f64,
    max_attempts: u64,
    /// Row-major `n x K` whitened covariates.
    u: Vec<f64>,
    /// `n / (n1 n0)`: maps the squared whitened sum to `M`.
    scale: f64,
}

impl RemSampler {
    pub fn new(x: &DMatrix<f64>, spec: &DesignSpec) -> Result<Self> {
        let (n, k) = x.shape();
        let n1 = spec.n1;
        if n1 == 0 || n1 >= n {
            return Err(Error::InvalidArgument(format!("need 0 < n1 < n, got n1 = {n1}, n = {n}")));
        }
        let a = spec.threshold();
        if a.is_nan() || a <= 0.0 {
            return Err(Error::InvalidArgument(format!("threshold a = {a} must be positive")));
        }
        if spec.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        let xc = center_columns(x);
        let u = if k == 0 || a == f64::INFINITY {
            Vec::new()
        } else {
            let s2x = xc.transpose() * &xc / (n as f64 - 1.0);
            let chol = s2x.cholesky().ok_or_else(|| Error::Singular("S2x".into()))?;
            let ut = chol
                .l()
                .solve_lower_triangular(&xc.transpose())
                .ok_or_else(|| Error::Singular("S2x".into()))?;
            // Column-major K x n is row-major n x K.
            ut.as_slice().to_vec()
        };
        let n0 = n - n1;
        Ok(Self {
            n,
            n1,
            k,
            a,
            max_attempts: spec.max_attempts,
            u,
            scale: n as f64 / (n1 as f64 * n0 as f64),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.a
    }

    /// `M` for an allocation, from the whitened covariates.
    pub fn statistic(&self, z: &Assignment) -> f64 {
        if self.u.is_empty() {
            return 0.0;
        }
        let mut s = vec![0.0; self.k];
        for i in (0..self.n).filter(|&i| z.is_treated(i)) {
            for (c, acc) in s.iter_mut().enumerate() {
                *acc += self.u[i * self.k + c];
            }
        }
        self.scale * s.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Assignment, u64)> {
        let (n, n1) = (self.n, self.n1);
        if self.u.is_empty() {
            return Ok((draw_cre(n, n1, rng), 1));
        }
        if u32::try_from(n).is_err() {
            return Err(Error::InvalidArgument(format!("n = {n} exceeds the sampler's index range")));
        }
        let pick_treated = n1 <= n - n1;
        let m = if pick_treated { n1 } else { n - n1 };
        let k = self.k;
        let bound = self.a / self.scale;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = vec![0.0; k];
        for attempt in 1..=self.max_attempts {
            let dist2 = if k == 1 {
                let mut acc = 0.0;
                for i in 0..m {
                    let j = rng.random_range(i as u32..n as u32) as usize;
                    perm.swap(i, j);
                    acc += self.u[perm[i]];
                }
                acc * acc
            } else {
                s.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..m {
                    let j = rng.random_range(i as u32..n as u32) as usize;
                    perm.swap(i, j);
                    let row = &self.u[perm[i] * k..perm[i] * k + k];
                    for (acc, v) in s.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                s.iter().map(|v| v * v).sum::<f64>()
            };
            if dist2 > bound * (1.0 + TIE_RTOL) {
                continue;
            }
            let z = if pick_treated {
                Assignment::from_treated(n, &perm[..m])
            } else {
                Assignment::from_treated(n, &perm[m..])
            };
            // Near the boundary the shuffled summation order could flip the
            // decision, so settle it with the order-independent statistic.
            if dist2 >= bound * (1.0 - TIE_RTOL) && self.statistic(&z) > self.a {
                continue;
            }
            return Ok((z, attempt));
        }
        Err(Error::RejectionCap {
            attempts: self.max_attempts,
            acceptance_upper: (3.0 / self.max_attempts as f64).min(1.0),
        })
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Every allocation with `n1` treated units, in lexicographic order of the
/// treated index sets.
pub fn enumerate_assignments(n: usize, n1: usize) -> Result<Vec<Assignment>> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidArgument(format!("need 0 < n1 < n, got n1 = {n1}, n = {n}")));
    }
    let count = binomial(n, n1);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooManyAssignments { n, n1, count, limit: ENUMERATION_LIMIT });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx: Vec<usize> = (0..n1).collect();
    loop {
        out.push(Assignment::from_treated(n, &idx));
        let Some(i) = (0..n1).rev().find(|&i| idx[i] < n - n1 + i) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..n1 {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(out)
}
