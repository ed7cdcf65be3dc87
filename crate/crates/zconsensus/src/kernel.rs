//! Interaction kernels and weight-balanced interaction matrices.
//!
//! Two kernel families are supported: a smoothed Hegselmann-Krause influence
//! function with an optional skew-cycle perturbation (which makes the matrix
//! directed but keeps it weight-balanced), and the Cucker-Smale weight
//! `K / (N (1 + ||x_i - x_j||^2)^beta)`.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// Model dimensions: order `k`, number of agents `N`, state dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub order: usize,
    pub agents: usize,
    pub dim: usize,
}

impl ModelConfig {
    pub fn new(order: usize, agents: usize, dim: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("order must be >= 1".into()));
        }
        if agents < 1 {
            return Err(Error::Config("agent count must be >= 1".into()));
        }
        if dim < 1 {
            return Err(Error::Config("state dimension must be >= 1".into()));
        }
        Ok(Self { order, agents, dim })
    }
}

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelVariant<T> {
    /// Smoothed Hegselmann-Krause influence with smoothness `alpha`.
    SmoothedHk { alpha: T },
    /// Cucker-Smale weight with interaction strength `K = strength` and
    /// distance-decay exponent `beta = decay`.
    CuckerSmale { strength: T, decay: T },
}

/// Kernel plus the skew-cycle strength (0 disables the perturbation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub variant: KernelVariant<T>,
    pub skew_strength: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(variant: KernelVariant<T>, skew_strength: T) -> Result<Self> {
        match variant {
            KernelVariant::SmoothedHk { alpha } => {
                if !alpha.is_finite() || alpha <= T::zero() {
                    return Err(Error::Config("HK smoothness alpha must be positive".into()));
                }
            }
            KernelVariant::CuckerSmale { strength, decay } => {
                if !strength.is_finite() || strength <= T::zero() {
                    return Err(Error::Config("CS strength K must be positive".into()));
                }
                if !decay.is_finite() || decay < T::zero() {
                    return Err(Error::Config("CS decay beta must be >= 0".into()));
                }
            }
        }
        if !skew_strength.is_finite() || skew_strength < T::zero() || skew_strength >= T::one() {
            return Err(Error::Config("skew strength must lie in [0, 1)".into()));
        }
        Ok(Self { variant, skew_strength })
    }

    /// Smoothed HK kernel with the skew cycle on (the default pairing).
    pub fn smoothed_hk(alpha: T, skew_strength: T) -> Result<Self> {
        Self::new(KernelVariant::SmoothedHk { alpha }, skew_strength)
    }

    /// Cucker-Smale kernel, symmetric (no skew perturbation).
    pub fn cucker_smale(strength: T, decay: T) -> Result<Self> {
        Self::new(KernelVariant::CuckerSmale { strength, decay }, T::zero())
    }

    pub fn is_cucker_smale(&self) -> bool {
        matches!(self.variant, KernelVariant::CuckerSmale { .. })
    }
}

/// Numerically stable logistic function `1 / (1 + e^{-y})`.
#[inline]
pub fn sigmoid<T: Real>(y: T) -> T {
    if y >= T::zero() {
        T::one() / (T::one() + (-y).exp())
    } else {
        let e = y.exp();
        e / (T::one() + e)
    }
}

/// Smoothed Hegselmann-Krause influence
/// `phi(r) = (1 - sig(alpha (r - 1))) / (1 - sig(-alpha))`.
///
/// Evaluated as `sig(alpha (1 - r)) / sig(alpha)`, which stays strictly
/// positive even for `alpha` around 300 where the naive form underflows.
pub fn phi_hk<T: Real>(r: T, alpha: T) -> Result<T> {
    if !r.is_finite() || !alpha.is_finite() {
        return Err(Error::NonFinite("phi_hk input".into()));
    }
    if r < T::zero() {
        return Err(Error::Config("phi_hk distance must be >= 0".into()));
    }
    if alpha <= T::zero() {
        return Err(Error::Config("phi_hk alpha must be positive".into()));
    }
    Ok(sigmoid(alpha * (T::one() - r)) / sigmoid(alpha))
}

/// Cucker-Smale interaction weight `K / (N (1 + ||xi - xj||^2)^beta)`.
pub fn cs_weight<T: Real>(xi: &[T], xj: &[T], strength: T, decay: T, agents: usize) -> Result<T> {
    let d2 = dist2_slices(xi, xj)?;
    Ok(cs_weight_from_dist2(d2, strength, decay, agents))
}

#[inline]
pub(crate) fn cs_weight_from_dist2<T: Real>(d2: T, strength: T, decay: T, agents: usize) -> T {
    let n = lit::<T>(agents as f64);
    let rho = T::one() + d2;
    if decay == T::zero() {
        strength / n
    } else if decay == T::one() {
        strength / (n * rho)
    } else {
        strength / (n * rho.powf(decay))
    }
}

fn dist2_slices<T: Real>(xi: &[T], xj: &[T]) -> Result<T> {
    if xi.len() != xj.len() {
        return Err(Error::Config("vectors of mismatched dimension".into()));
    }
    let mut acc = T::zero();
    for (a, b) in xi.iter().zip(xj) {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("cs_weight input".into()));
        }
        let diff = *a - *b;
        acc += diff * diff;
    }
    Ok(acc)
}

/// Squared distance between rows `i` and `j` of an `N x d` matrix.
#[inline]
pub(crate) fn row_dist2<T: Real>(x: &DMatrix<T>, i: usize, j: usize) -> T {
    let mut acc = T::zero();
    for c in 0..x.ncols() {
        let diff = x[(i, c)] - x[(j, c)];
        acc += diff * diff;
    }
    acc
}

/// Skew-cycle perturbation magnitude
/// `eps(x) = b * min(phi_{i,i-1} for i = 2..N, phi_{1,N})`.
pub fn epsilon_skew<T: Real>(positions: &DMatrix<T>, alpha: T, skew_strength: T) -> Result<T> {
    let n = positions.nrows();
    if n < 2 {
        return Err(Error::Config("skew perturbation needs at least 2 agents".into()));
    }
    let mut min_phi = phi_hk(row_dist2(positions, 0, n - 1).sqrt(), alpha)?;
    for i in 1..n {
        let p = phi_hk(row_dist2(positions, i, i - 1).sqrt(), alpha)?;
        if p < min_phi {
            min_phi = p;
        }
    }
    Ok(skew_strength * min_phi)
}

/// Constant skew-symmetric cycle matrix: `s_{i,i+1} = 1`, `s_{i,i-1} = -1`,
/// `s_{1,N} = -1`, `s_{N,1} = 1`, zero elsewhere.
pub fn skew_cycle_matrix(agents: usize) -> Result<DMatrix<i32>> {
    if agents < 2 {
        return Err(Error::Config("skew cycle needs at least 2 agents".into()));
    }
    let mut s = DMatrix::<i32>::zeros(agents, agents);
    for i in 0..agents {
        let next = (i + 1) % agents;
        s[(i, next)] += 1;
        s[(next, i)] -= 1;
    }
    Ok(s)
}

/// Nonnegative interaction matrix with zero diagonal, weight-balanced by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix<T> {
    entries: DMatrix<T>,
}

impl<T: Real> InteractionMatrix<T> {
    /// Wrap a raw matrix, checking shape, sign, diagonal, and balance.
    pub fn try_new(entries: DMatrix<T>, tol: T) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::Config("interaction matrix must be square".into()));
        }
        for i in 0..entries.nrows() {
            if entries[(i, i)] != T::zero() {
                return Err(Error::Config("interaction matrix diagonal must be zero".into()));
            }
            for j in 0..entries.ncols() {
                let a = entries[(i, j)];
                if !a.is_finite() {
                    return Err(Error::NonFinite("interaction matrix entry".into()));
                }
                if a < T::zero() {
                    return Err(Error::Config(format!(
                        "negative interaction weight at ({i}, {j})"
                    )));
                }
            }
        }
        let m = Self { entries };
        let (balanced, defect) = m.check_weight_balanced(tol);
        if !balanced {
            return Err(Error::Config(format!(
                "interaction matrix is not weight-balanced (defect {})",
                crate::scalar::to_f64(defect)
            )));
        }
        Ok(m)
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn agents(&self) -> usize {
        self.entries.nrows()
    }

    /// Row sums `r_i = sum_k a_ik`.
    pub fn row_strengths(&self) -> DVector<T> {
        DVector::from_iterator(self.agents(), self.entries.row_iter().map(|r| r.iter().copied().sum()))
    }

    /// Balance check: `max_i |sum_j a_ij - sum_j a_ji| <= tol`.
    /// Returns the verdict together with the maximum defect.
    pub fn check_weight_balanced(&self, tol: T) -> (bool, T) {
        let n = self.agents();
        let mut max_defect = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            let mut col = T::zero();
            for j in 0..n {
                row += self.entries[(i, j)];
                col += self.entries[(j, i)];
            }
            let defect = (row - col).abs();
            if defect > max_defect {
                max_defect = defect;
            }
        }
        (max_defect <= tol, max_defect)
    }

    /// Default balance tolerance, scaled by the matrix magnitude:
    /// `1e-10 * max(1, ||A||_max)`.
    pub fn default_balance_tol(&self) -> T {
        let amax = self
            .entries
            .iter()
            .fold(T::zero(), |m, &a| if a.abs() > m { a.abs() } else { m });
        lit::<T>(1e-10) * if amax > T::one() { amax } else { T::one() }
    }
}

/// Assemble the interaction matrix for the given positions and kernel.
///
/// For the smoothed HK kernel with `skew_strength > 0` the entries are
/// `a_ij = phi_ij + eps(x) s_ij`; the Cucker-Smale entries come straight from
/// the weight formula. The result is weight-balanced in both cases.
pub fn build_interaction_matrix<T: Real>(
    positions: &DMatrix<T>,
    kernel: &KernelSpec<T>,
) -> Result<InteractionMatrix<T>> {
    let n = positions.nrows();
    if n < 1 {
        return Err(Error::Config("need at least one agent".into()));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("positions".into()));
    }
    let mut a = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = match kernel.variant {
                KernelVariant::SmoothedHk { alpha } => {
                    phi_hk(row_dist2(positions, i, j).sqrt(), alpha)?
                }
                KernelVariant::CuckerSmale { strength, decay } => {
                    cs_weight_from_dist2(row_dist2(positions, i, j), strength, decay, n)
                }
            };
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    if kernel.skew_strength > T::zero() {
        if n < 2 {
            return Err(Error::Config("skew perturbation needs at least 2 agents".into()));
        }
        // eps is bounded by skew_strength * min cycle-edge weight, so the
        // perturbed entries stay nonnegative; verified again below.
        let eps = match kernel.variant {
            KernelVariant::SmoothedHk { alpha } => {
                epsilon_skew(positions, alpha, kernel.skew_strength)?
            }
            KernelVariant::CuckerSmale { .. } => {
                let mut min_w = a[(0, n - 1)];
                for i in 1..n {
                    if a[(i, i - 1)] < min_w {
                        min_w = a[(i, i - 1)];
                    }
                }
                kernel.skew_strength * min_w
            }
        };
        for i in 0..n {
            let next = (i + 1) % n;
            a[(i, next)] += eps;
            a[(next, i)] -= eps;
            if a[(next, i)] < T::zero() {
                return Err(Error::Config(
                    "skew perturbation produced a negative interaction weight".into(),
                ));
            }
        }
    }
    let tol = {
        let amax = a.iter().fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
        lit::<T>(1e-10) * if amax > T::one() { amax } else { T::one() }
    };
    InteractionMatrix::try_new(a, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positions(n: usize, d: usize, seed: u64, half_width: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-half_width..half_width))
    }

    #[test]
    fn phi_at_zero_is_one() {
        for alpha in [0.1, 1.6, 5.0, 300.0] {
            assert_relative_eq!(phi_hk(0.0_f64, alpha).unwrap(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn phi_hand_value() {
        // r = 1, alpha = 2: phi = 0.5 / (1 - sig(-2))
        let sig_m2 = 1.0 / (1.0 + 2.0_f64.exp());
        let expected = 0.5 / (1.0 - sig_m2);
        assert_relative_eq!(phi_hk(1.0_f64, 2.0).unwrap(), expected, epsilon = 1e-14);
        assert_relative_eq!(phi_hk(1.0_f64, 2.0).unwrap(), 0.5677, epsilon = 1e-4);
    }

    #[test]
    fn phi_steep_kernel_underflows_gracefully() {
        let v = phi_hk(2.0_f64, 300.0).unwrap();
        assert!(v > 0.0, "phi must stay strictly positive, got {v}");
        assert!(v < 1e-100, "phi should be effectively zero, got {v}");
    }

    #[test]
    fn phi_rejects_bad_input() {
        assert!(phi_hk(f64::NAN, 1.0).is_err());
        assert!(phi_hk(1.0, f64::INFINITY).is_err());
        assert!(phi_hk(-0.5, 1.0).is_err());
        assert!(phi_hk(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn phi_monotone_non_increasing(
            r1 in 0.0..10.0_f64,
            r2 in 0.0..10.0_f64,
            alpha in 0.05..50.0_f64,
        ) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let p_lo = phi_hk(lo, alpha).unwrap();
            let p_hi = phi_hk(hi, alpha).unwrap();
            prop_assert!(p_lo >= p_hi - 1e-15);
            prop_assert!(p_lo <= 1.0 && p_hi > 0.0);
        }

        #[test]
        fn skew_cycle_sums_vanish(n in 2usize..50) {
            let s = skew_cycle_matrix(n).unwrap();
            for i in 0..n {
                prop_assert_eq!(s.row(i).iter().sum::<i32>(), 0);
                prop_assert_eq!(s.column(i).iter().sum::<i32>(), 0);
            }
            prop_assert_eq!(&s.transpose(), &(-s.clone()));
        }
    }

    #[test]
    fn cs_weight_hand_values() {
        let xi = [0.0, 0.0];
        // zero distance -> K/N
        assert_relative_eq!(cs_weight(&xi, &xi, 1.0, 1.0, 10).unwrap(), 0.1);
        // ||xi - xj||^2 = 3, K = 1, beta = 1, N = 10 -> 1/40
        let xj = [1.0, (2.0_f64).sqrt()];
        assert_relative_eq!(cs_weight(&xi, &xj, 1.0, 1.0, 10).unwrap(), 0.025, epsilon = 1e-15);
        // beta = 0 removes distance dependence
        assert_relative_eq!(cs_weight(&xi, &xj, 2.0, 0.0, 4).unwrap(), 0.5);
    }

    #[test]
    fn epsilon_skew_coincident_agents() {
        let x = DMatrix::from_element(5, 2, 1.5);
        assert_relative_eq!(epsilon_skew(&x, 2.0, 0.8).unwrap(), 0.8, epsilon = 1e-14);
    }

    #[test]
    fn epsilon_skew_is_b_times_min_cycle_phi() {
        let x = random_positions(6, 2, 7, 2.0);
        let alpha = 1.6;
        let b = 0.8;
        let n = x.nrows();
        let mut cycle_phis = vec![phi_hk(row_dist2(&x, 0, n - 1).sqrt(), alpha).unwrap()];
        for i in 1..n {
            cycle_phis.push(phi_hk(row_dist2(&x, i, i - 1).sqrt(), alpha).unwrap());
        }
        let expected = b * cycle_phis.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(epsilon_skew(&x, alpha, b).unwrap(), expected, epsilon = 1e-15);
        assert!(epsilon_skew(&x, alpha, b).unwrap() <= b);
    }

    #[test]
    fn epsilon_skew_rejects_single_agent() {
        let x = DMatrix::from_element(1, 2, 0.0);
        assert!(epsilon_skew(&x, 1.0, 0.5).is_err());
    }

    #[test]
    fn skew_cycle_n3_pattern() {
        let s = skew_cycle_matrix(3).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0, 1, -1, -1, 0, 1, 1, -1, 0]);
        assert_eq!(s, expected);
    }

    #[test]
    fn hk_matrix_symmetric_without_skew() {
        let x = random_positions(8, 2, 11, 3.0);
        let kernel = KernelSpec::smoothed_hk(1.6, 0.0).unwrap();
        let a = build_interaction_matrix(&x, &kernel).unwrap();
        let m = a.matrix();
        assert_relative_eq!(m, &m.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn hk_matrix_with_skew_is_balanced_and_asymmetric() {
        let x = random_positions(10, 2, 13, 3.0);
        let kernel = KernelSpec::smoothed_hk(1.6, 0.8).unwrap();
        let a = build_interaction_matrix(&x, &kernel).unwrap();
        let (ok, defect) = a.check_weight_balanced(1e-12);
        assert!(ok, "balance defect {defect}");
        let eps = epsilon_skew(&x, 1.6, 0.8).unwrap();
        let m = a.matrix();
        for i in 0..9 {
            assert_relative_eq!(m[(i, i + 1)] - m[(i + 1, i)], 2.0 * eps, epsilon = 1e-13);
        }
    }

    #[test]
    fn cs_matrix_coincident_agents() {
        let x = DMatrix::from_element(10, 2, 0.3);
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let a = build_interaction_matrix(&x, &kernel).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i == j { 0.0 } else { 0.1 };
                assert_relative_eq!(a.matrix()[(i, j)], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn balance_check_flags_perturbation() {
        let x = random_positions(6, 2, 17, 2.0);
        let kernel = KernelSpec::smoothed_hk(1.6, 0.0).unwrap();
        let a = build_interaction_matrix(&x, &kernel).unwrap();
        let tol = 1e-10;
        let (ok, defect) = a.check_weight_balanced(tol);
        assert!(ok);
        assert_relative_eq!(defect, 0.0, epsilon = 1e-14);

        let mut perturbed = a.matrix().clone();
        perturbed[(0, 1)] += 2.0 * tol;
        let raw = InteractionMatrix { entries: perturbed };
        let (ok, defect) = raw.check_weight_balanced(tol);
        assert!(!ok);
        assert!(defect >= 2.0 * tol * 0.99);
    }

    #[test]
    fn kernel_spec_rejects_bad_parameters() {
        assert!(KernelSpec::smoothed_hk(0.0_f64, 0.5).is_err());
        assert!(KernelSpec::smoothed_hk(1.0_f64, 1.0).is_err());
        assert!(KernelSpec::smoothed_hk(1.0_f64, -0.1).is_err());
        assert!(KernelSpec::cucker_smale(-1.0_f64, 1.0).is_err());
        assert!(KernelSpec::cucker_smale(1.0_f64, -0.5).is_err());
    }

    #[test]
    fn balance_property_random_states() {
        for seed in 0..20u64 {
            let x = random_positions(10, 2, seed, 4.0);
            for kernel in [
                KernelSpec::smoothed_hk(1.6, 0.8).unwrap(),
                KernelSpec::smoothed_hk(300.0, 0.8).unwrap(),
                KernelSpec::cucker_smale(1.0, 1.0).unwrap(),
            ] {
                let a = build_interaction_matrix(&x, &kernel).unwrap();
                let (ok, defect) = a.check_weight_balanced(a.default_balance_tol());
                assert!(ok, "defect {defect} for seed {seed}");
            }
        }
    }
}
