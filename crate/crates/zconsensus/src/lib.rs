//! k-th order multi-agent consensus dynamics under Z-control.
//!
//! The crate simulates systems of `N` agents in `R^d` whose highest-order
//! state aligns through weight-balanced Laplacian coupling, and implements
//! error-driven (Z-control) feedback in two flavors:
//!
//! * **direct** control injected into the top-order equation, valid for any
//!   order, with exact exponential error decay at rate `lambda`;
//! * **indirect** control injected into a lower-order equation (position or
//!   velocity), obtained by solving a rank-deficient block linear system
//!   `L_B U = -R` in the minimum-norm least-squares sense.
//!
//! Core math is generic over the scalar type (see [`scalar::Real`]); the
//! `f64` aliases below are what the CLI and most callers use.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod integrate;
pub mod kernel;
pub mod lsq;
pub mod scalar;

use thiserror::Error as ThisError;

/// Crate-wide error type.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("numerical blow-up at t = {t}: {context}")]
    Blowup { t: f64, context: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use control::direct::{direct_control, rhs_direct};
pub use control::indirect::{indirect_control, IndirectMode};
pub use dynamics::{average_top, consensus_gamma, rhs_uncontrolled, StateStack};
pub use integrate::{consensus_time, fit_decay_rate, simulate, ControlSpec, SimConfig, Trajectory};
pub use kernel::{
    build_interaction_matrix, phi_hk, InteractionMatrix, KernelSpec, KernelVariant, ModelConfig,
};
pub use lsq::{expected_rank, min_agents, min_norm_lstsq, LsqDiagnostics};

/// Concrete `f64` aliases for the main domain types.
pub type StateStack64 = dynamics::StateStack<f64>;
pub type InteractionMatrix64 = kernel::InteractionMatrix<f64>;
pub type KernelSpec64 = kernel::KernelSpec<f64>;
pub type ControlSpec64 = integrate::ControlSpec<f64>;
pub type SimConfig64 = integrate::SimConfig<f64>;
pub type Trajectory64 = integrate::Trajectory<f64>;
pub type LsqDiagnostics64 = lsq::LsqDiagnostics<f64>;
