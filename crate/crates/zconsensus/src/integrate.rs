//! Fixed-step RK4 time integration with trajectory recording.
//!
//! Controls are state feedback: by default they are re-evaluated at every
//! integrator stage (four evaluations, and for indirect modes four
//! least-squares solves, per step). A cheaper hold-per-step mode exists behind
//! a flag for large sweeps.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::direct::rhs_direct;
use crate::control::indirect::{indirect_control, IndirectMode};
use crate::dynamics::{
    average_top, consensus_gamma, laplacian_coupling, rhs_uncontrolled, DerivativeStack, StateStack,
};
use crate::kernel::{build_interaction_matrix, KernelSpec, ModelConfig};
use crate::lsq::{min_agents, LsqDiagnostics};
use crate::scalar::{lit, to_f64, Real};
use crate::{Error, Result};

/// Which control law drives the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlSpec<T> {
    None,
    Direct { lambda: T },
    Indirect { mode: IndirectMode, lambda: T },
}

impl<T: Real> ControlSpec<T> {
    pub fn lambda(&self) -> Option<T> {
        match self {
            ControlSpec::None => None,
            ControlSpec::Direct { lambda } | ControlSpec::Indirect { lambda, .. } => Some(*lambda),
        }
    }
}

/// Initial conditions: seeded uniform draws per block, or explicit arrays.
#[derive(Debug, Clone, PartialEq)]
pub enum IcSpec<T> {
    /// One `(lo, hi)` box per block; every entry of block `r` is drawn
    /// uniformly from `[lo_r, hi_r]`.
    UniformBoxes { bounds: Vec<(T, T)> },
    Explicit { blocks: Vec<DMatrix<T>> },
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub dt: T,
    pub t_end: T,
    pub control: ControlSpec<T>,
    pub record_every: usize,
    pub seed: u64,
    pub ic: IcSpec<T>,
    /// Re-solve the control at every RK4 stage (default) instead of holding
    /// it constant over the step.
    pub solve_every_stage: bool,
}

impl<T: Real> SimConfig<T> {
    pub fn new(dt: T, t_end: T, control: ControlSpec<T>, ic: IcSpec<T>) -> Self {
        Self { dt, t_end, control, record_every: 1, seed: 0, ic, solve_every_stage: true }
    }
}

/// Recorded time series of one run.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<StateStack<T>>,
    /// Control inputs evaluated at each recorded state.
    pub controls: Vec<DMatrix<T>>,
    pub gamma: Vec<T>,
    /// `||xbar^(k)(t) - xbar^(k)(0)||` per recorded sample.
    pub average_drift: Vec<T>,
    /// Solver diagnostics per recorded sample (indirect modes only).
    pub diagnostics: Vec<Option<LsqDiagnostics<T>>>,
    /// First time the indirect block system was flagged degenerate.
    pub degenerate_from: Option<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_gamma(&self) -> T {
        *self.gamma.last().expect("trajectory non-empty")
    }

    /// Largest `||sum_i u_i||` over recorded samples, relative to the largest
    /// control magnitude (0 when controls stay identically zero).
    pub fn max_zero_sum_defect(&self) -> T {
        let mut worst = T::zero();
        for u in &self.controls {
            let mut umax = T::zero();
            for val in u.iter() {
                if val.abs() > umax {
                    umax = val.abs();
                }
            }
            if umax == T::zero() {
                continue;
            }
            let col_sum = crate::dynamics::mean_row(u) * lit::<T>(u.nrows() as f64);
            let rel = col_sum.norm() / (lit::<T>(u.nrows() as f64) * umax);
            if rel > worst {
                worst = rel;
            }
        }
        worst
    }

    pub fn max_average_drift(&self) -> T {
        self.average_drift.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn max_compat_defect(&self) -> T {
        self.diagnostics
            .iter()
            .flatten()
            .map(|d| d.compat_defect)
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

/// Validate a full run configuration before any stepping.
pub fn validate<T: Real>(
    model: &ModelConfig,
    kernel: &KernelSpec<T>,
    sim: &SimConfig<T>,
) -> Result<()> {
    if !(sim.dt > T::zero()) || !sim.dt.is_finite() {
        return Err(Error::Config("dt must be positive and finite".into()));
    }
    if !(sim.t_end >= sim.dt) {
        return Err(Error::Config("t_end must be at least dt".into()));
    }
    if sim.record_every < 1 {
        return Err(Error::Config("record_every must be >= 1".into()));
    }
    if model.order < 1 {
        return Err(Error::Config("order must be >= 1".into()));
    }
    match &sim.control {
        ControlSpec::None => {
            if model.agents < 1 {
                return Err(Error::Config("need at least one agent".into()));
            }
        }
        ControlSpec::Direct { lambda } => {
            if model.agents < 2 {
                return Err(Error::Config("controlled runs need at least 2 agents".into()));
            }
            if model.order > 3 {
                return Err(Error::Config("controlled runs support order 1..3".into()));
            }
            if !(*lambda > T::zero()) {
                return Err(Error::Config("lambda must be positive".into()));
            }
        }
        ControlSpec::Indirect { mode, lambda } => {
            if model.order != mode.order() {
                return Err(Error::Config(format!(
                    "indirect mode {} requires order {}",
                    mode.name(),
                    mode.order()
                )));
            }
            if !(*lambda > T::zero()) {
                return Err(Error::Config("lambda must be positive".into()));
            }
            if !kernel.is_cucker_smale() || kernel.skew_strength != T::zero() {
                return Err(Error::Config(
                    "indirect control requires the symmetric Cucker-Smale kernel".into(),
                ));
            }
            let min_n = min_agents(model.dim)?;
            if model.agents < min_n {
                return Err(Error::Config(format!(
                    "indirect control needs N >= {min_n} for d = {}, got N = {}",
                    model.dim, model.agents
                )));
            }
        }
    }
    match &sim.ic {
        IcSpec::UniformBoxes { bounds } => {
            if bounds.len() != model.order {
                return Err(Error::Config(format!(
                    "ic boxes: expected {} blocks, got {}",
                    model.order,
                    bounds.len()
                )));
            }
            for (lo, hi) in bounds {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::Config("ic box bounds must be finite with lo <= hi".into()));
                }
            }
        }
        IcSpec::Explicit { blocks } => {
            if blocks.len() != model.order {
                return Err(Error::Config("explicit ic must provide one block per order".into()));
            }
            for b in blocks {
                if b.nrows() != model.agents || b.ncols() != model.dim {
                    return Err(Error::Config("explicit ic blocks must be N x d".into()));
                }
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("explicit initial condition".into()));
                }
            }
        }
    }
    Ok(())
}

/// Draw the initial state for a validated configuration.
pub fn initial_state<T: Real>(
    model: &ModelConfig,
    ic: &IcSpec<T>,
    seed: u64,
) -> Result<StateStack<T>> {
    match ic {
        IcSpec::Explicit { blocks } => StateStack::new(blocks.clone()),
        IcSpec::UniformBoxes { bounds } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks = bounds
                .iter()
                .map(|(lo, hi)| {
                    let lo = to_f64(*lo);
                    let hi = to_f64(*hi);
                    DMatrix::from_fn(model.agents, model.dim, |_, _| {
                        if hi > lo {
                            lit(rng.gen_range(lo..hi))
                        } else {
                            lit(lo)
                        }
                    })
                })
                .collect();
            StateStack::new(blocks)
        }
    }
}

/// One full derivative evaluation: derivative stack, applied controls, and
/// solver diagnostics (indirect only).
fn eval_rhs<T: Real>(
    state: &StateStack<T>,
    kernel: &KernelSpec<T>,
    control: &ControlSpec<T>,
) -> Result<(DerivativeStack<T>, DMatrix<T>, Option<LsqDiagnostics<T>>, bool)> {
    match control {
        ControlSpec::None => {
            let deriv = rhs_uncontrolled(state, kernel)?;
            let u = DMatrix::zeros(state.agents(), state.dim());
            Ok((deriv, u, None, false))
        }
        ControlSpec::Direct { lambda } => {
            let (deriv, u) = rhs_direct(state, kernel, *lambda)?;
            Ok((deriv, u, None, false))
        }
        ControlSpec::Indirect { mode, lambda } => {
            let outcome = indirect_control(state, kernel, *lambda, *mode)?;
            let deriv = indirect_rhs(state, kernel, *mode, &outcome.controls)?;
            Ok((deriv, outcome.controls, Some(outcome.diagnostics), outcome.degenerate))
        }
    }
}

/// Controlled right-hand side with a fixed (already-solved) control input.
fn indirect_rhs<T: Real>(
    state: &StateStack<T>,
    kernel: &KernelSpec<T>,
    mode: IndirectMode,
    controls: &DMatrix<T>,
) -> Result<DerivativeStack<T>> {
    let a = build_interaction_matrix(state.positions(), kernel)?;
    let k = state.order();
    let mut blocks = Vec::with_capacity(k);
    for r in 0..k - 1 {
        blocks.push(state.block(r + 1).clone());
    }
    blocks.push(laplacian_coupling(&a, state.top()));
    let mut deriv = StateStack::new(blocks)?;
    *deriv.block_mut(mode.controlled_block()) += controls;
    Ok(deriv)
}

/// Run the simulation and record the trajectory.
pub fn simulate<T: Real>(
    model: &ModelConfig,
    kernel: &KernelSpec<T>,
    sim: &SimConfig<T>,
) -> Result<Trajectory<T>> {
    validate(model, kernel, sim)?;
    let mut state = initial_state(model, &sim.ic, sim.seed)?;
    let n_steps = (to_f64(sim.t_end) / to_f64(sim.dt) + 1e-9).floor() as usize;

    let initial_avg = average_top(&state);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        gamma: Vec::new(),
        average_drift: Vec::new(),
        diagnostics: Vec::new(),
        degenerate_from: None,
    };

    let record =
        |t: T, state: &StateStack<T>, traj: &mut Trajectory<T>| -> Result<()> {
            let (_, u, diag, degenerate) = eval_rhs(state, kernel, &sim.control)?;
            traj.times.push(t);
            traj.gamma.push(consensus_gamma(state));
            traj.average_drift.push((average_top(state) - &initial_avg).norm());
            traj.controls.push(u);
            traj.diagnostics.push(diag);
            if degenerate && traj.degenerate_from.is_none() {
                traj.degenerate_from = Some(t);
            }
            traj.states.push(state.clone());
            Ok(())
        };

    record(T::zero(), &state, &mut traj)?;

    for step in 0..n_steps {
        let t = sim.dt * lit::<T>(step as f64);
        let result = if sim.solve_every_stage {
            rk4_step(&state, sim.dt, |s| eval_rhs(s, kernel, &sim.control).map(|r| r.0))
        } else {
            // hold the control fixed over the step
            let (_, u, _, _) = eval_rhs(&state, kernel, &sim.control)?;
            match &sim.control {
                ControlSpec::Indirect { mode, .. } => {
                    let mode = *mode;
                    rk4_step(&state, sim.dt, |s| indirect_rhs(s, kernel, mode, &u))
                }
                _ => rk4_step(&state, sim.dt, |s| eval_rhs(s, kernel, &sim.control).map(|r| r.0)),
            }
        };
        state = result.map_err(|e| match e {
            Error::NonFinite(ctx) => Error::Blowup {
                t: to_f64(t),
                context: format!("non-finite {ctx} during step {step}"),
            },
            other => other,
        })?;
        if !state.is_finite() {
            return Err(Error::Blowup {
                t: to_f64(t + sim.dt),
                context: format!("state became non-finite after step {step}"),
            });
        }
        if (step + 1) % sim.record_every == 0 {
            let t_next = sim.dt * lit::<T>((step + 1) as f64);
            record(t_next, &state, &mut traj)?;
        }
    }
    Ok(traj)
}

/// Classical RK4 step with state feedback evaluated at every stage.
fn rk4_step<T: Real>(
    state: &StateStack<T>,
    dt: T,
    mut f: impl FnMut(&StateStack<T>) -> Result<DerivativeStack<T>>,
) -> Result<StateStack<T>> {
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    let sixth = lit::<T>(1.0 / 6.0);
    let k1 = f(state)?;
    let k2 = f(&state.add_scaled(&k1, dt * half))?;
    let k3 = f(&state.add_scaled(&k2, dt * half))?;
    let k4 = f(&state.add_scaled(&k3, dt))?;
    let combo = k1
        .add_scaled(&k2, two)
        .add_scaled(&k3, two)
        .add_scaled(&k4, T::one());
    Ok(state.add_scaled(&combo, dt * sixth))
}

/// Least-squares slope of `log Gamma` versus `t` over the window where
/// `Gamma > floor`. Needs at least three usable samples.
pub fn fit_decay_rate<T: Real>(gamma: &[T], times: &[T], floor: T) -> Result<T> {
    if gamma.len() != times.len() {
        return Err(Error::Config("gamma and time series lengths differ".into()));
    }
    let pts: Vec<(T, T)> = gamma
        .iter()
        .zip(times)
        .filter(|(g, _)| **g > floor)
        .map(|(g, t)| (*t, g.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} samples above the floor; need at least 3",
            pts.len()
        )));
    }
    let n = lit::<T>(pts.len() as f64);
    let t_mean = pts.iter().map(|(t, _)| *t).sum::<T>() / n;
    let y_mean = pts.iter().map(|(_, y)| *y).sum::<T>() / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (t, y) in &pts {
        num += (*t - t_mean) * (*y - y_mean);
        den += (*t - t_mean) * (*t - t_mean);
    }
    if den == T::zero() {
        return Err(Error::InsufficientData("degenerate time window".into()));
    }
    Ok(num / den)
}

/// First recorded time with `Gamma <= threshold`, if any.
pub fn consensus_time<T: Real>(gamma: &[T], times: &[T], threshold: T) -> Option<T> {
    gamma
        .iter()
        .zip(times)
        .find(|(g, _)| **g <= threshold)
        .map(|(_, t)| *t)
}
