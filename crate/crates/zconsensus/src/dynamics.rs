//! Uncontrolled k-th order dynamics and consensus metrics.
//!
//! The state of the population is a stack of `k` blocks, each `N x d`:
//! positions, velocities, ..., up to the top-order state. The top block
//! evolves by Laplacian-type coupling through the interaction matrix; each
//! lower block is the integral of the next one.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::kernel::{build_interaction_matrix, InteractionMatrix, KernelSpec};
use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// Stacked states `X^(1..k)`, each block an `N x d` matrix (one agent per row).
#[derive(Debug, Clone, PartialEq)]
pub struct StateStack<T> {
    blocks: Vec<DMatrix<T>>,
}

/// Time derivative of a [`StateStack`]; same layout.
pub type DerivativeStack<T> = StateStack<T>;

impl<T: Real> StateStack<T> {
    pub fn new(blocks: Vec<DMatrix<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("state stack needs at least one block".into()));
        }
        let (n, d) = (blocks[0].nrows(), blocks[0].ncols());
        if n < 1 || d < 1 {
            return Err(Error::Config("state blocks must be non-empty".into()));
        }
        for b in &blocks {
            if b.nrows() != n || b.ncols() != d {
                return Err(Error::Config("state blocks must share one N x d shape".into()));
            }
        }
        Ok(Self { blocks })
    }

    pub fn zeros(order: usize, agents: usize, dim: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("order must be >= 1".into()));
        }
        Self::new(vec![DMatrix::zeros(agents, dim); order])
    }

    pub fn order(&self) -> usize {
        self.blocks.len()
    }

    pub fn agents(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Block `r` (zero-based; block 0 holds the positions).
    pub fn block(&self, r: usize) -> &DMatrix<T> {
        &self.blocks[r]
    }

    pub fn block_mut(&mut self, r: usize) -> &mut DMatrix<T> {
        &mut self.blocks[r]
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    /// The positions `X^(1)`.
    pub fn positions(&self) -> &DMatrix<T> {
        &self.blocks[0]
    }

    /// The top-order block `X^(k)` whose consensus is targeted.
    pub fn top(&self) -> &DMatrix<T> {
        self.blocks.last().expect("non-empty by construction")
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self + scale * other`, the stepping primitive of the integrator.
    pub fn add_scaled(&self, other: &Self, scale: T) -> Self {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a + b * scale)
            .collect();
        Self { blocks }
    }
}

/// Laplacian-type coupling `(A Z)_i - r_i z_i` applied to the rows of `top`.
pub fn laplacian_coupling<T: Real>(a: &InteractionMatrix<T>, top: &DMatrix<T>) -> DMatrix<T> {
    let mut out = a.matrix() * top;
    let strengths: DVector<T> = a.row_strengths();
    for i in 0..top.nrows() {
        for c in 0..top.ncols() {
            out[(i, c)] -= strengths[i] * top[(i, c)];
        }
    }
    out
}

/// Right-hand side of the uncontrolled system: each block shifts down by one
/// derivative and the top block couples through the interaction matrix, which
/// is rebuilt from the current positions.
pub fn rhs_uncontrolled<T: Real>(
    state: &StateStack<T>,
    kernel: &KernelSpec<T>,
) -> Result<DerivativeStack<T>> {
    let a = build_interaction_matrix(state.positions(), kernel)?;
    Ok(rhs_with_matrix(state, &a))
}

/// As [`rhs_uncontrolled`] with a caller-supplied interaction matrix.
pub fn rhs_with_matrix<T: Real>(
    state: &StateStack<T>,
    a: &InteractionMatrix<T>,
) -> DerivativeStack<T> {
    let k = state.order();
    let mut blocks = Vec::with_capacity(k);
    for r in 0..k - 1 {
        blocks.push(state.block(r + 1).clone());
    }
    blocks.push(laplacian_coupling(a, state.top()));
    StateStack { blocks }
}

/// Arithmetic mean of the top-order rows, `xbar^(k)`.
pub fn average_top<T: Real>(state: &StateStack<T>) -> RowDVector<T> {
    mean_row(state.top())
}

pub(crate) fn mean_row<T: Real>(m: &DMatrix<T>) -> RowDVector<T> {
    let n = lit::<T>(m.nrows() as f64);
    let mut mean = RowDVector::zeros(m.ncols());
    for i in 0..m.nrows() {
        mean += m.row(i);
    }
    mean / n
}

/// Consensus parameter `Gamma = (1/N^2) sum_i ||x_i^(k) - xbar^(k)||^2`.
pub fn consensus_gamma<T: Real>(state: &StateStack<T>) -> T {
    let top = state.top();
    let mean = mean_row(top);
    let mut acc = T::zero();
    for i in 0..top.nrows() {
        for c in 0..top.ncols() {
            let dev = top[(i, c)] - mean[c];
            acc += dev * dev;
        }
    }
    let n = lit::<T>(top.nrows() as f64);
    acc / (n * n)
}
