//! Direct Z-control on the top-order state.
//!
//! The control `u_i = -lambda (x_i^(k) - xbar^(k)) - sum_j a_ij (x_j^(k) - x_i^(k))`
//! cancels the coupling and replaces it with a pure exponential contraction of
//! the deviation from the (conserved) average. It is zero-sum whenever the
//! interaction matrix is weight-balanced, so the average is preserved.

use nalgebra::DMatrix;

use crate::dynamics::{laplacian_coupling, mean_row, DerivativeStack, StateStack};
use crate::kernel::{build_interaction_matrix, InteractionMatrix, KernelSpec};
use crate::scalar::Real;
use crate::{Error, Result};

/// Control inputs for all agents (one row per agent).
pub fn direct_control<T: Real>(
    state: &StateStack<T>,
    a: &InteractionMatrix<T>,
    lambda: T,
) -> Result<DMatrix<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::Config("direct control rate lambda must be positive".into()));
    }
    let top = state.top();
    let mean = mean_row(top);
    let coupling = laplacian_coupling(a, top);
    let mut u = DMatrix::zeros(top.nrows(), top.ncols());
    for i in 0..top.nrows() {
        for c in 0..top.ncols() {
            u[(i, c)] = -lambda * (top[(i, c)] - mean[c]) - coupling[(i, c)];
        }
    }
    Ok(u)
}

/// Controlled right-hand side. Returns the derivative stack together with the
/// applied control inputs.
///
/// By construction the top block equals `-lambda (x^(k) - xbar^(k))`
/// elementwise, independent of the kernel.
pub fn rhs_direct<T: Real>(
    state: &StateStack<T>,
    kernel: &KernelSpec<T>,
    lambda: T,
) -> Result<(DerivativeStack<T>, DMatrix<T>)> {
    let a = build_interaction_matrix(state.positions(), kernel)?;
    let u = direct_control(state, &a, lambda)?;
    let mut deriv = crate::dynamics::rhs_with_matrix(state, &a);
    let k = state.order();
    *deriv.block_mut(k - 1) += &u;
    Ok((deriv, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_agent_hand_case() {
        // top states (1, -1), a_12 = a_21 = 0.3, lambda = 1
        // u_1 = -1*(1 - 0) - 0.3*(-2) = -0.4, u_2 = +0.4
        let state = StateStack::new(vec![DMatrix::from_row_slice(2, 1, &[1.0, -1.0])]).unwrap();
        let a = InteractionMatrix::try_new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]),
            1e-12,
        )
        .unwrap();
        let u = direct_control(&state, &a, 1.0).unwrap();
        assert_relative_eq!(u[(0, 0)], -0.4, epsilon = 1e-14);
        assert_relative_eq!(u[(1, 0)], 0.4, epsilon = 1e-14);
    }

    #[test]
    fn vanishes_at_consensus() {
        let state = StateStack::new(vec![DMatrix::from_element(5, 2, 1.3)]).unwrap();
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let a = build_interaction_matrix(state.positions(), &kernel).unwrap();
        let u = direct_control(&state, &a, 2.0).unwrap();
        assert_relative_eq!(u.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn controls_are_zero_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let blocks = vec![
                DMatrix::from_fn(10, 2, |_, _| rng.gen_range(-3.0..3.0)),
                DMatrix::from_fn(10, 2, |_, _| rng.gen_range(-3.0..3.0)),
            ];
            let state = StateStack::new(blocks).unwrap();
            let kernel = KernelSpec::smoothed_hk(1.6, 0.8).unwrap();
            let a = build_interaction_matrix(state.positions(), &kernel).unwrap();
            let u = direct_control(&state, &a, 1.5).unwrap();
            let col_sums = mean_row(&u) * 10.0;
            assert_relative_eq!(col_sums.norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn top_dynamics_reduce_to_pure_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = StateStack::new(vec![DMatrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0))])
            .unwrap();
        let lambda = 0.7;
        let kernel = KernelSpec::smoothed_hk(1.6, 0.8).unwrap();
        let (deriv, _) = rhs_direct(&state, &kernel, lambda).unwrap();
        let mean = mean_row(state.top());
        for i in 0..3 {
            let expected = -lambda * (state.top()[(i, 0)] - mean[0]);
            assert_relative_eq!(deriv.top()[(i, 0)], expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let state = StateStack::new(vec![DMatrix::from_element(3, 1, 1.0)]).unwrap();
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let a = build_interaction_matrix(state.positions(), &kernel).unwrap();
        assert!(direct_control(&state, &a, 0.0).is_err());
        assert!(direct_control(&state, &a, -1.0).is_err());
    }
}
