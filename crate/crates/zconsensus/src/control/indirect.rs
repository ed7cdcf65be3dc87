//! Indirect Z-control: block-system assembly and the three derived laws.
//!
//! For the Cucker-Smale family the control acts on a lower-order state while
//! consensus is targeted on the top one. Enforcing the second- (or third-)
//! order error formula leads to a linear system `L_B U = -R` whose blocks are
//! rank-one outer products; `R` is always zero-sum across agents (the
//! compatibility condition), and the system is solved in the minimum-norm
//! least-squares sense.
//!
//! Triple and quadruple sums are evaluated through precomputed matrix
//! products; the naive summation oracles live in the integration tests.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{mean_row, StateStack};
use crate::kernel::{InteractionMatrix, KernelSpec, KernelVariant};
use crate::lsq::{min_agents, min_norm_lstsq, LsqDiagnostics, RankTolPolicy};
use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// Which lower-order state carries the control input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndirectMode {
    /// Second-order model, control on positions, consensus on velocities.
    VelViaPos,
    /// Third-order model, control on positions, consensus on accelerations.
    AccViaPos,
    /// Third-order model, control on velocities, consensus on accelerations.
    AccViaVel,
}

impl IndirectMode {
    /// Model order the mode applies to.
    pub fn order(&self) -> usize {
        match self {
            IndirectMode::VelViaPos => 2,
            IndirectMode::AccViaPos | IndirectMode::AccViaVel => 3,
        }
    }

    /// Index of the block receiving the control input (zero-based).
    pub fn controlled_block(&self) -> usize {
        match self {
            IndirectMode::VelViaPos | IndirectMode::AccViaPos => 0,
            IndirectMode::AccViaVel => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IndirectMode::VelViaPos => "vel_via_pos",
            IndirectMode::AccViaPos => "acc_via_pos",
            IndirectMode::AccViaVel => "acc_via_vel",
        }
    }
}

/// Pairwise scalars of the third-order expansion:
/// `rho = 1 + ||xi - xj||^2`, `s = (xi - xj)^T (vi - vj)`,
/// `q = ||vi - vj||^2`, `r = (xi - xj)^T (zi - zj)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScalars<T> {
    pub rho: T,
    pub s: T,
    pub q: T,
    pub r: T,
}

/// Pairwise scalars for rows `i`, `j` of positions / velocities /
/// accelerations.
pub fn pair_scalars<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    z: &DMatrix<T>,
    i: usize,
    j: usize,
) -> PairScalars<T> {
    let mut rho = T::one();
    let mut s = T::zero();
    let mut q = T::zero();
    let mut r = T::zero();
    for c in 0..x.ncols() {
        let dx = x[(i, c)] - x[(j, c)];
        let dv = v[(i, c)] - v[(j, c)];
        let dz = z[(i, c)] - z[(j, c)];
        rho += dx * dx;
        s += dx * dv;
        q += dv * dv;
        r += dx * dz;
    }
    PairScalars { rho, s, q, r }
}

/// Derivative coefficient `b_ij = -(2 beta K / N) rho^(-beta-1)`.
pub fn b_coeff<T: Real>(xi: &[T], xj: &[T], strength: T, decay: T, agents: usize) -> T {
    let mut d2 = T::zero();
    for (a, b) in xi.iter().zip(xj) {
        let diff = *a - *b;
        d2 += diff * diff;
    }
    b_coeff_from_rho(T::one() + d2, strength, decay, agents)
}

#[inline]
fn b_coeff_from_rho<T: Real>(rho: T, strength: T, decay: T, agents: usize) -> T {
    if decay == T::zero() {
        return T::zero();
    }
    let n = lit::<T>(agents as f64);
    -(lit::<T>(2.0) * decay * strength / n) * rho.powf(-decay - T::one())
}

/// Control-independent part of the second derivative of `a_ij`:
/// `(1/N) [4 beta (beta+1) K rho^(-beta-2) s^2 - 2 beta K rho^(-beta-1) (q + r)]`.
pub fn a_ddot0<T: Real>(pair: &PairScalars<T>, strength: T, decay: T, agents: usize) -> T {
    let n = lit::<T>(agents as f64);
    let four = lit::<T>(4.0);
    let two = lit::<T>(2.0);
    (four * decay * (decay + T::one()) * strength * pair.rho.powf(-decay - two) * pair.s * pair.s
        - two * decay * strength * pair.rho.powf(-decay - T::one()) * (pair.q + pair.r))
        / n
}

/// Row interaction strength `r_i = sum_k a_ik`.
pub fn row_strength<T: Real>(a: &InteractionMatrix<T>, i: usize) -> T {
    a.matrix().row(i).iter().copied().sum()
}

/// `rdot_i = sum_j b_ij s_ij`, the time derivative of `r_i` along the
/// uncontrolled flow.
pub fn row_strength_dot<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    strength: T,
    decay: T,
    i: usize,
) -> T {
    let n = x.nrows();
    let mut acc = T::zero();
    for j in 0..n {
        if j == i {
            continue;
        }
        let p = pair_scalars(x, v, v, i, j);
        acc += b_coeff_from_rho(p.rho, strength, decay, n) * p.s;
    }
    acc
}

/// Cucker-Smale parameters extracted from a kernel spec; indirect control is
/// only derived for this family with the symmetric (skew-free) matrix.
fn cs_params<T: Real>(kernel: &KernelSpec<T>) -> Result<(T, T)> {
    if kernel.skew_strength != T::zero() {
        return Err(Error::Config(
            "indirect control requires a symmetric kernel (skew_strength = 0)".into(),
        ));
    }
    match kernel.variant {
        KernelVariant::CuckerSmale { strength, decay } => Ok((strength, decay)),
        KernelVariant::SmoothedHk { .. } => Err(Error::Config(
            "indirect control is derived for the Cucker-Smale kernel only".into(),
        )),
    }
}

/// Pairwise coefficient matrices shared by the indirect right-hand sides.
struct CsMatrices<T> {
    /// Interaction weights `a_ij` (zero diagonal).
    a: DMatrix<T>,
    /// `adot_ij = b_ij s_ij` (zero diagonal).
    a_dot: DMatrix<T>,
    /// Row strengths `r_i`.
    r: DVector<T>,
    /// `rdot_i = sum_j b_ij s_ij`.
    r_dot: DVector<T>,
}

fn cs_matrices<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    strength: T,
    decay: T,
) -> Result<CsMatrices<T>> {
    let n = x.nrows();
    let mut a = DMatrix::zeros(n, n);
    let mut a_dot = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = pair_scalars(x, v, v, i, j);
            let w = crate::kernel::cs_weight_from_dist2(p.rho - T::one(), strength, decay, n);
            let c = b_coeff_from_rho(p.rho, strength, decay, n) * p.s;
            a[(i, j)] = w;
            a[(j, i)] = w;
            // s_ij is symmetric under index swap (both factors flip sign)
            a_dot[(i, j)] = c;
            a_dot[(j, i)] = c;
        }
    }
    let r = DVector::from_iterator(n, a.row_iter().map(|row| row.iter().copied().sum()));
    let r_dot = DVector::from_iterator(n, a_dot.row_iter().map(|row| row.iter().copied().sum()));
    if a.iter().any(|e| !e.is_finite()) || a_dot.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("interaction coefficients".into()));
    }
    Ok(CsMatrices { a, a_dot, r, r_dot })
}

/// Scale row `i` of `m` by `w[i]`.
fn row_scale<T: Real>(w: &DVector<T>, m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for c in 0..m.ncols() {
            out[(i, c)] *= w[i];
        }
    }
    out
}

/// Subtract the column mean from every row: `m - 1 mbar`.
fn center_rows<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mean = mean_row(m);
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for c in 0..m.ncols() {
            out[(i, c)] -= mean[c];
        }
    }
    out
}

/// Block matrix `L_B(x, w)`: off-diagonal block `-b_ij (w_j - w_i)(x_i - x_j)^T`,
/// diagonal block the negated sum of the off-diagonal row blocks.
///
/// `w` is the velocity block for the second-order law and the acceleration
/// block for both third-order laws.
pub fn assemble_lb<T: Real>(
    x: &DMatrix<T>,
    w: &DMatrix<T>,
    strength: T,
    decay: T,
) -> Result<DMatrix<T>> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::Config("block system needs at least 2 agents".into()));
    }
    if w.nrows() != n || w.ncols() != d {
        return Err(Error::Config("position and target blocks must share shape".into()));
    }
    let mut lb = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        let mut diag = DMatrix::<T>::zeros(d, d);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut d2 = T::zero();
            for c in 0..d {
                let dx = x[(i, c)] - x[(j, c)];
                d2 += dx * dx;
            }
            let b = b_coeff_from_rho(T::one() + d2, strength, decay, n);
            // block (i, j) = -b (w_j - w_i)(x_i - x_j)^T
            for rr in 0..d {
                let wdiff = w[(j, rr)] - w[(i, rr)];
                for cc in 0..d {
                    let xdiff = x[(i, cc)] - x[(j, cc)];
                    let val = -b * wdiff * xdiff;
                    lb[(i * d + rr, j * d + cc)] = val;
                    diag[(rr, cc)] -= val;
                }
            }
        }
        for rr in 0..d {
            for cc in 0..d {
                lb[(i * d + rr, i * d + cc)] = diag[(rr, cc)];
            }
        }
    }
    Ok(lb)
}

/// Right-hand side of the second-order indirect law (control on positions,
/// consensus on velocities). Returns one `R_i` per row.
pub fn rhs_r_second<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    strength: T,
    decay: T,
    lambda: T,
) -> Result<DMatrix<T>> {
    let m = cs_matrices(x, v, strength, decay)?;
    Ok(coupling_rhs_core(&m, v, lambda))
}

/// Right-hand side of the third-order indirect-via-position law. Same
/// structure as the second-order one with the acceleration block in the
/// coupling slots (the mixed term keeps `s_ij` from positions/velocities).
pub fn rhs_r_third_pos<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    z: &DMatrix<T>,
    strength: T,
    decay: T,
    lambda: T,
) -> Result<DMatrix<T>> {
    let m = cs_matrices(x, v, strength, decay)?;
    Ok(coupling_rhs_core(&m, z, lambda))
}

/// Shared core of the two order-2 error formulas:
/// `R = Adot W - rdot.W + A(A W) - r.(A W) + r^2.W - A(r.W)
///    + 2 lambda (A W - r.W) + lambda^2 (W - 1 wbar)`
/// where `.` scales rows and `W` is the consensus-target block.
fn coupling_rhs_core<T: Real>(m: &CsMatrices<T>, target: &DMatrix<T>, lambda: T) -> DMatrix<T> {
    let two = lit::<T>(2.0);
    let aw = &m.a * target;
    let r2: DVector<T> = m.r.component_mul(&m.r);
    let mut out = &m.a_dot * target - row_scale(&m.r_dot, target);
    out += &m.a * &aw - row_scale(&m.r, &aw);
    out += row_scale(&r2, target) - &m.a * row_scale(&m.r, target);
    out += (&aw - row_scale(&m.r, target)) * (two * lambda);
    out += center_rows(target) * (lambda * lambda);
    out
}

/// Right-hand side of the third-order indirect-via-velocity law (order-3
/// error formula, fully expanded with no time derivatives left).
pub fn rhs_r_third_vel<T: Real>(
    x: &DMatrix<T>,
    v: &DMatrix<T>,
    z: &DMatrix<T>,
    strength: T,
    decay: T,
    lambda: T,
) -> Result<DMatrix<T>> {
    let m = cs_matrices(x, v, strength, decay)?;
    let n = x.nrows();
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);

    // addot0 matrix and its row sums
    let mut addot0 = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = pair_scalars(x, v, z, i, j);
            let val = a_ddot0(&p, strength, decay, n);
            addot0[(i, j)] = val;
            addot0[(j, i)] = val;
        }
    }
    let addot0_row: DVector<T> =
        DVector::from_iterator(n, addot0.row_iter().map(|row| row.iter().copied().sum()));

    let az = &m.a * z;
    let cz = &m.a_dot * z;
    let r2: DVector<T> = m.r.component_mul(&m.r);
    let r_rdot: DVector<T> = m.r.component_mul(&m.r_dot);
    // w_k = r_k z_k - (A z)_k, the negated coupling
    let w = row_scale(&m.r, z) - &az;
    let aw = &m.a * &w;

    // sum_j addot0_ij (z_j - z_i)
    let mut out = &addot0 * z - row_scale(&addot0_row, z);
    // 2 sum_{j,k} adot_ij (a_jk - a_ik) z_k
    out += (&m.a_dot * &az - row_scale(&m.r_dot, &az)) * two;
    // 2 r_i rdot_i z_i
    out += row_scale(&r_rdot, z) * two;
    // -2 sum_j adot_ij r_j z_j
    out -= (&m.a_dot * row_scale(&m.r, z)) * two;
    // sum_{j,k} a_ij (adot_jk - adot_ik) z_k
    out += &m.a * &cz - row_scale(&m.r, &cz);
    // sum_{j,k,l} a_ij a_kl (a_jk - a_ik)(z_l - z_k): the inner sum over l is
    // zdot_k = -w_k, so the block is -(A (A w) - r.(A w))
    out -= &m.a * &aw - row_scale(&m.r, &aw);
    // - sum_j a_ij rdot_j z_j
    out -= &m.a * row_scale(&m.r_dot, z);
    // - sum_{j,k} a_ij a_jk r_j (z_k - z_j) = + (A (r . w))_i
    out += &m.a * row_scale(&m.r, &w);
    // + r_i rdot_i z_i
    out += row_scale(&r_rdot, z);
    // + sum_j a_ij r_i^2 (z_j - z_i)
    out += row_scale(&r2, &az) - row_scale(&r2.component_mul(&m.r), z);
    // 3 lambda zddot_i
    out += (&cz - row_scale(&m.r_dot, z)
        + &m.a * &az
        - row_scale(&m.r, &az)
        + row_scale(&r2, z)
        - &m.a * row_scale(&m.r, z))
        * (three * lambda);
    // 3 lambda^2 zdot_i
    out += (&az - row_scale(&m.r, z)) * (three * lambda * lambda);
    // lambda^3 (z_i - zbar)
    out += center_rows(z) * (lambda * lambda * lambda);
    Ok(out)
}

/// Outcome of one indirect-control evaluation.
#[derive(Debug, Clone)]
pub struct IndirectOutcome<T> {
    /// Control inputs, one row per agent.
    pub controls: DMatrix<T>,
    pub diagnostics: LsqDiagnostics<T>,
    /// Set when the block matrix has collapsed (consensus reached); the
    /// control is zero in that case.
    pub degenerate: bool,
}

/// Assemble and solve `L_B U = -R` for the requested mode at the given state.
pub fn indirect_control<T: Real>(
    state: &StateStack<T>,
    kernel: &KernelSpec<T>,
    lambda: T,
    mode: IndirectMode,
) -> Result<IndirectOutcome<T>> {
    let (strength, decay) = cs_params(kernel)?;
    if !(lambda > T::zero()) {
        return Err(Error::Config("indirect control rate lambda must be positive".into()));
    }
    if state.order() != mode.order() {
        return Err(Error::Config(format!(
            "mode {} needs an order-{} model, got order {}",
            mode.name(),
            mode.order(),
            state.order()
        )));
    }
    let (n, d) = (state.agents(), state.dim());
    let min_n = min_agents(d)?;
    if n < min_n {
        return Err(Error::Config(format!(
            "indirect control needs N >= {min_n} agents for d = {d}, got N = {n}"
        )));
    }
    let x = state.block(0);
    let r = match mode {
        IndirectMode::VelViaPos => rhs_r_second(x, state.block(1), strength, decay, lambda)?,
        IndirectMode::AccViaPos => {
            rhs_r_third_pos(x, state.block(1), state.block(2), strength, decay, lambda)?
        }
        IndirectMode::AccViaVel => {
            rhs_r_third_vel(x, state.block(1), state.block(2), strength, decay, lambda)?
        }
    };
    let target = state.top();
    let lb = assemble_lb(x, target, strength, decay)?;

    let compat_defect = (mean_row(&r) * lit::<T>(n as f64)).norm();
    let rhs = DVector::from_iterator(n * d, r.transpose().iter().copied());
    let neg_rhs = -&rhs;
    let (u_flat, mut diagnostics) = min_norm_lstsq(&lb, &neg_rhs, &RankTolPolicy::default())?;
    diagnostics.compat_defect = compat_defect;

    // Near consensus the blocks collapse; treat the system as degenerate
    // rather than dividing by vanishing singular values.
    let rhs_norm = rhs.norm();
    let floor = lit::<T>(1e-12) * if rhs_norm > T::one() { rhs_norm } else { T::one() };
    if diagnostics.sigma_max < floor {
        diagnostics.residual_norm = rhs_norm;
        return Ok(IndirectOutcome {
            controls: DMatrix::zeros(n, d),
            diagnostics,
            degenerate: true,
        });
    }
    let mut controls = DMatrix::zeros(n, d);
    for i in 0..n {
        for c in 0..d {
            controls[(i, c)] = u_flat[i * d + c];
        }
    }
    Ok(IndirectOutcome { controls, diagnostics, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_interaction_matrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn b_coeff_hand_values() {
        let o = [0.0, 0.0];
        assert_relative_eq!(b_coeff(&o, &o, 1.0, 1.0, 10), -0.2, epsilon = 1e-15);
        let xj = [1.0, 0.0];
        assert_relative_eq!(b_coeff(&o, &xj, 1.0, 1.0, 10), -0.05, epsilon = 1e-15);
        assert_relative_eq!(b_coeff(&o, &xj, 1.0, 0.0, 10), 0.0);
    }

    #[test]
    fn b_coeff_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xj: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(
                b_coeff(&xi, &xj, 1.0, 1.3, 7),
                b_coeff(&xj, &xi, 1.0, 1.3, 7)
            );
        }
    }

    #[test]
    fn pair_scalars_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(5, 3, &mut rng, 2.0);
        let v = random_matrix(5, 3, &mut rng, 2.0);
        let z = random_matrix(5, 3, &mut rng, 2.0);
        for i in 0..5 {
            for j in 0..5 {
                let p = pair_scalars(&x, &v, &z, i, j);
                let q = pair_scalars(&x, &v, &z, j, i);
                assert_relative_eq!(p.rho, q.rho, epsilon = 1e-14);
                assert_relative_eq!(p.s, q.s, epsilon = 1e-14);
                assert_relative_eq!(p.q, q.q, epsilon = 1e-14);
                assert_relative_eq!(p.r, q.r, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn a_ddot0_hand_values() {
        let zero = PairScalars { rho: 1.0, s: 0.0, q: 0.0, r: 0.0 };
        assert_relative_eq!(a_ddot0(&zero, 1.0, 1.0, 5), 0.0);
        let p = PairScalars { rho: 1.0, s: 1.0, q: 0.0, r: 0.0 };
        assert_relative_eq!(a_ddot0(&p, 1.0, 1.0, 1), 8.0, epsilon = 1e-14);
    }

    #[test]
    fn row_strength_hand_case() {
        let x = DMatrix::from_element(10, 2, 0.5);
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let a = build_interaction_matrix(&x, &kernel).unwrap();
        for i in 0..10 {
            assert_relative_eq!(row_strength(&a, i), 0.9, epsilon = 1e-14);
        }
        let zero = InteractionMatrix::try_new(DMatrix::zeros(4, 4), 1e-12).unwrap();
        assert_relative_eq!(row_strength(&zero, 2), 0.0);
    }

    #[test]
    fn row_strength_dot_vanishes_for_equal_velocities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let v = DMatrix::from_element(6, 2, 1.2);
        for i in 0..6 {
            assert_relative_eq!(row_strength_dot(&x, &v, 1.0, 1.0, i), 0.0, epsilon = 1e-15);
        }
        // beta = 0 kills b_ij
        let v2 = random_matrix(6, 2, &mut rng, 2.0);
        for i in 0..6 {
            assert_relative_eq!(row_strength_dot(&x, &v2, 1.0, 0.0, i), 0.0);
        }
    }

    #[test]
    fn lb_zero_at_target_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let w = DMatrix::from_element(6, 2, 0.4);
        let lb = assemble_lb(&x, &w, 1.0, 1.0).unwrap();
        assert_relative_eq!(lb.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lb_block_sums_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 6;
        let d = 2;
        let x = random_matrix(n, d, &mut rng, 2.0);
        let w = random_matrix(n, d, &mut rng, 2.0);
        let lb = assemble_lb(&x, &w, 1.0, 1.0).unwrap();
        let scale = lb.norm();
        for i in 0..n {
            let mut row_block = DMatrix::<f64>::zeros(d, d);
            let mut col_block = DMatrix::<f64>::zeros(d, d);
            for j in 0..n {
                for rr in 0..d {
                    for cc in 0..d {
                        row_block[(rr, cc)] += lb[(i * d + rr, j * d + cc)];
                        col_block[(rr, cc)] += lb[(j * d + rr, i * d + cc)];
                    }
                }
            }
            assert!(row_block.norm() <= 1e-12 * scale, "block row {i}");
            assert!(col_block.norm() <= 1e-12 * scale, "block col {i}");
        }
    }

    #[test]
    fn lb_offdiagonal_blocks_are_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 3;
        let x = random_matrix(5, d, &mut rng, 2.0);
        let w = random_matrix(5, d, &mut rng, 2.0);
        let lb = assemble_lb(&x, &w, 1.0, 1.0).unwrap();
        let block = lb.view((0 * d, 1 * d), (d, d)).into_owned();
        let sv = block.singular_values();
        assert!(sv[1] <= 1e-13 * sv[0].max(1e-300), "second singular value {}", sv[1]);
    }

    #[test]
    fn lb_rank_matches_formula_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for (n, d) in [(6usize, 2usize), (8, 2)] {
            let x = random_matrix(n, d, &mut rng, 2.0);
            let w = random_matrix(n, d, &mut rng, 2.0);
            let lb = assemble_lb(&x, &w, 1.0, 1.0).unwrap();
            let rank = crate::lsq::numerical_rank(&lb, &RankTolPolicy::default());
            assert_eq!(rank, crate::lsq::expected_rank(n, d).unwrap(), "N={n} d={d}");
        }
    }

    #[test]
    fn rhs_second_vanishes_at_velocity_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let v = DMatrix::from_element(6, 2, -0.3);
        let r = rhs_r_second(&x, &v, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(r.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rhs_third_vanishes_at_acceleration_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let v = random_matrix(6, 2, &mut rng, 2.0);
        let z = DMatrix::from_element(6, 2, 0.8);
        let r_pos = rhs_r_third_pos(&x, &v, &z, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(r_pos.norm(), 0.0, epsilon = 1e-13);
        let r_vel = rhs_r_third_vel(&x, &v, &z, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(r_vel.norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn compatibility_zero_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..50 {
            let x = random_matrix(8, 2, &mut rng, 2.0);
            let v = random_matrix(8, 2, &mut rng, 2.0);
            let z = random_matrix(8, 2, &mut rng, 2.0);
            for r in [
                rhs_r_second(&x, &v, 1.0, 1.0, 1.0).unwrap(),
                rhs_r_third_pos(&x, &v, &z, 1.0, 1.0, 1.0).unwrap(),
                rhs_r_third_vel(&x, &v, &z, 1.0, 1.0, 1.0).unwrap(),
            ] {
                let total = mean_row(&r) * 8.0;
                let magnitude: f64 = r.row_iter().map(|row| row.norm()).sum();
                assert!(
                    total.norm() <= 1e-10 * magnitude.max(1e-300),
                    "defect {} vs magnitude {}",
                    total.norm(),
                    magnitude
                );
            }
        }
    }

    #[test]
    fn third_pos_is_second_with_target_substituted() {
        // the coupling slots carry z instead of v; the mixed term keeps s_ij
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let v = random_matrix(6, 2, &mut rng, 2.0);
        let r_third = rhs_r_third_pos(&x, &v, &v, 1.0, 1.0, 0.7).unwrap();
        let r_second = rhs_r_second(&x, &v, 1.0, 1.0, 0.7).unwrap();
        assert_relative_eq!(r_third, r_second, epsilon = 1e-13);
    }

    #[test]
    fn indirect_consensus_state_gives_zero_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = random_matrix(6, 2, &mut rng, 2.0);
        let v = random_matrix(6, 2, &mut rng, 2.0);
        let z = DMatrix::from_element(6, 2, 0.1);
        let state = StateStack::new(vec![x, v, z]).unwrap();
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let out = indirect_control(&state, &kernel, 1.0, IndirectMode::AccViaVel).unwrap();
        assert!(out.degenerate);
        assert_relative_eq!(out.controls.norm(), 0.0);
        assert_relative_eq!(out.diagnostics.residual_norm, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn indirect_residual_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 6;
        let d = 2;
        let x = random_matrix(n, d, &mut rng, 2.0);
        let v = random_matrix(n, d, &mut rng, 2.0);
        let state = StateStack::new(vec![x.clone(), v.clone()]).unwrap();
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        let out = indirect_control(&state, &kernel, 1.0, IndirectMode::VelViaPos).unwrap();
        assert!(!out.degenerate);

        // independent decomposition: residual = || (I - Q Q^T)(-R) || with Q an
        // orthonormal basis of range(L_B)
        let lb = assemble_lb(&x, &v, 1.0, 1.0).unwrap();
        let r = rhs_r_second(&x, &v, 1.0, 1.0, 1.0).unwrap();
        let rhs = -DVector::from_iterator(n * d, r.transpose().iter().copied());
        let svd = lb.clone().svd(true, true);
        let tol = RankTolPolicy::default().threshold(n * d, n * d, svd.singular_values.max());
        let u_mat = svd.u.unwrap();
        let mut proj = DVector::zeros(n * d);
        for (idx, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                let q = u_mat.column(idx);
                proj += q * (q.dot(&rhs));
            }
        }
        let oracle = (&rhs - proj).norm();
        assert_relative_eq!(out.diagnostics.residual_norm, oracle, epsilon = 1e-9);
    }

    #[test]
    fn indirect_validates_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let d = 5;
        let n = 3; // min_agents(5) = 4
        let x = random_matrix(n, d, &mut rng, 2.0);
        let v = random_matrix(n, d, &mut rng, 2.0);
        let state = StateStack::new(vec![x, v]).unwrap();
        let kernel = KernelSpec::cucker_smale(1.0, 1.0).unwrap();
        assert!(matches!(
            indirect_control(&state, &kernel, 1.0, IndirectMode::VelViaPos),
            Err(Error::Config(_))
        ));
        // wrong order for the mode
        let state2 = StateStack::new(vec![random_matrix(6, 2, &mut rng, 1.0)]).unwrap();
        assert!(indirect_control(&state2, &kernel, 1.0, IndirectMode::VelViaPos).is_err());
        // HK kernel not admissible
        let hk = KernelSpec::smoothed_hk(1.6, 0.0).unwrap();
        let state3 = StateStack::new(vec![
            random_matrix(6, 2, &mut rng, 1.0),
            random_matrix(6, 2, &mut rng, 1.0),
        ])
        .unwrap();
        assert!(indirect_control(&state3, &hk, 1.0, IndirectMode::VelViaPos).is_err());
    }
}
