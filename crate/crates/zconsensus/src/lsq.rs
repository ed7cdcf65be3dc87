//! Minimum-norm least-squares solver with rank diagnostics.
//!
//! The indirect control laws lead to `L_B U = -R` with `L_B` structurally
//! rank-deficient (deficiency `d(d+1)/2`). The control is taken as the
//! truncated-SVD pseudo-inverse solution: among all residual minimizers, the
//! one of least norm.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// Conditioning and solvability diagnostics of one least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqDiagnostics<T> {
    /// Number of singular values above the truncation threshold.
    pub rank: usize,
    /// `||M u - b||` of the returned solution.
    pub residual_norm: T,
    pub sigma_max: T,
    /// Smallest singular value kept by the truncation (0 when rank is 0).
    pub sigma_min_positive: T,
    /// `||sum_i R_i||`, filled by the indirect-control assembly.
    pub compat_defect: T,
}

/// Truncation policy for counting singular values as nonzero.
///
/// A singular value is kept when
/// `sigma > max(m, n) * sigma_max * relative` and
/// `sigma > absolute_floor_factor * sigma_max`.
#[derive(Debug, Clone, Copy)]
pub struct RankTolPolicy<T> {
    pub relative: T,
    pub absolute_floor_factor: T,
}

impl<T: Real> Default for RankTolPolicy<T> {
    fn default() -> Self {
        Self {
            relative: T::default_epsilon(),
            absolute_floor_factor: lit(1e-14),
        }
    }
}

impl<T: Real> RankTolPolicy<T> {
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: T) -> T {
        let dim = lit::<T>(rows.max(cols) as f64);
        let rel = dim * sigma_max * self.relative;
        let floor = self.absolute_floor_factor * sigma_max;
        if rel > floor {
            rel
        } else {
            floor
        }
    }
}

/// Minimum-norm solution of `min_u ||M u - b||`.
pub fn min_norm_lstsq<T: Real>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    policy: &RankTolPolicy<T>,
) -> Result<(DVector<T>, LsqDiagnostics<T>)> {
    if m.nrows() != b.nrows() {
        return Err(Error::Config("matrix and rhs dimensions differ".into()));
    }
    if m.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u_mat = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma = &svd.singular_values;

    let sigma_max = sigma.iter().fold(T::zero(), |a, &s| if s > a { s } else { a });
    let tol = policy.threshold(rows, cols, sigma_max);

    let mut rank = 0usize;
    let mut sigma_min_positive = T::zero();
    // coefficients in the singular basis: x = V diag(1/sigma) U^T b, truncated
    let ut_b = u_mat.transpose() * b;
    let mut coeffs = DVector::zeros(sigma.len());
    for (idx, &s) in sigma.iter().enumerate() {
        if s > tol {
            rank += 1;
            if sigma_min_positive == T::zero() || s < sigma_min_positive {
                sigma_min_positive = s;
            }
            coeffs[idx] = ut_b[idx] / s;
        }
    }
    let u = v_t.transpose() * coeffs;
    let residual_norm = (m * &u - b).norm();
    Ok((
        u,
        LsqDiagnostics {
            rank,
            residual_norm,
            sigma_max,
            sigma_min_positive,
            compat_defect: T::zero(),
        },
    ))
}

/// Numerical rank of a matrix under the same truncation policy (singular
/// values only; no solve).
pub fn numerical_rank<T: Real>(m: &DMatrix<T>, policy: &RankTolPolicy<T>) -> usize {
    let (rows, cols) = m.shape();
    let sigma = m.clone().singular_values();
    let sigma_max = sigma.iter().fold(T::zero(), |a, &s| if s > a { s } else { a });
    let tol = policy.threshold(rows, cols, sigma_max);
    sigma.iter().filter(|&&s| s > tol).count()
}

/// Structural rank of `L_B` at generic states: `N d - d (d + 1) / 2`.
pub fn expected_rank(agents: usize, dim: usize) -> Result<usize> {
    if agents < 1 || dim < 1 {
        return Err(Error::Config("expected_rank needs N, d >= 1".into()));
    }
    let full = (agents * dim) as isize;
    let deficiency = (dim * (dim + 1) / 2) as isize;
    let rank = full - deficiency;
    if rank < 0 {
        return Err(Error::Config(format!(
            "rank formula negative for N = {agents}, d = {dim}: too few agents"
        )));
    }
    Ok(rank as usize)
}

/// Smallest agent count for which the indirect system has rank >= 1:
/// `N >= ceil((d + 1) / 2 + 1 / d)`.
pub fn min_agents(dim: usize) -> Result<usize> {
    if dim < 1 {
        return Err(Error::Config("min_agents needs d >= 1".into()));
    }
    // smallest N with N d - d(d+1)/2 >= 1
    let needed = dim * (dim + 1) / 2 + 1;
    Ok(needed.div_ceil(dim))
}
