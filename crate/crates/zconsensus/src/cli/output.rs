//! CSV emission for recorded trajectories.
//!
//! All floating-point fields use 17 significant digits, which round-trips
//! `f64` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::integrate::Trajectory;
use crate::Result;

/// `f64` to decimal with 17 significant digits (exact round-trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_gamma_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "t,gamma")?;
    for (t, g) in traj.times.iter().zip(&traj.gamma) {
        writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*g))?;
    }
    Ok(w.flush()?)
}

pub fn write_controls_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "t,agent,component,value")?;
    for (t, u) in traj.times.iter().zip(&traj.controls) {
        for agent in 0..u.nrows() {
            for component in 0..u.ncols() {
                writeln!(
                    w,
                    "{},{agent},{component},{}",
                    fmt_f64(*t),
                    fmt_f64(u[(agent, component)])
                )?;
            }
        }
    }
    Ok(w.flush()?)
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "t,block,agent,component,value")?;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for (block, m) in state.blocks().iter().enumerate() {
            for agent in 0..m.nrows() {
                for component in 0..m.ncols() {
                    writeln!(
                        w,
                        "{},{block},{agent},{component},{}",
                        fmt_f64(*t),
                        fmt_f64(m[(agent, component)])
                    )?;
                }
            }
        }
    }
    Ok(w.flush()?)
}

/// Rows are written only for samples where a least-squares solve happened.
pub fn write_diagnostics_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "t,rank,residual,sigma_max,sigma_min,compat_defect")?;
    for (t, diag) in traj.times.iter().zip(&traj.diagnostics) {
        if let Some(d) = diag {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(*t),
                d.rank,
                fmt_f64(d.residual_norm),
                fmt_f64(d.sigma_max),
                fmt_f64(d.sigma_min_positive),
                fmt_f64(d.compat_defect)
            )?;
        }
    }
    Ok(w.flush()?)
}
