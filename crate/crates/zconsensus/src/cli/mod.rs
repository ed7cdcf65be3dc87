//! Configuration, presets, batch execution, and artifact emission.
//!
//! The binary is a thin argument-parsing layer over this module so that every
//! behavior stays testable in-process.

pub mod config;
pub mod output;
pub mod presets;

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use crate::integrate::{simulate, ControlSpec, Trajectory};
use crate::kernel::ModelConfig;
use crate::lsq::{expected_rank, numerical_rank, RankTolPolicy};
use crate::scalar::lit;
use crate::{Error, Result};

pub use config::{ExpectSection, Job, RunConfig};
pub use output::fmt_f64;
pub use presets::{registry, resolve, Preset, PresetEntry};

/// Post-run summary, serialized as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    /// First recorded time with `Gamma <= threshold`, if reached.
    pub consensus_time: Option<f64>,
    pub consensus_threshold: f64,
    /// Fitted slope of `log Gamma` (about `-2 lambda` under direct control).
    pub decay_rate: Option<f64>,
    pub final_gamma: f64,
    pub max_average_drift: f64,
    pub max_zero_sum_defect: f64,
    /// Indirect runs only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_compat_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_from: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectSection>,
    /// Whether the declared expectation held, when one was declared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expectation_met: Option<bool>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RankSummary {
    pub observed: usize,
    pub expected: usize,
    pub matches: bool,
}

/// Singular-value diagnostics at the last recorded solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverSummary {
    pub sigma_max_final: f64,
    pub sigma_min_final: f64,
    pub residual_final: f64,
}

const DEFAULT_THRESHOLD: f64 = 1e-6;
const DECAY_FIT_FLOOR: f64 = 1e-13;

/// Build the report for one finished trajectory.
pub fn build_report(
    name: &str,
    model: &ModelConfig,
    control: &ControlSpec<f64>,
    expect: Option<ExpectSection>,
    traj: &Trajectory<f64>,
) -> RunReport {
    let threshold = expect
        .as_ref()
        .and_then(|e| e.threshold)
        .unwrap_or(DEFAULT_THRESHOLD);
    let consensus_time = crate::integrate::consensus_time(&traj.gamma, &traj.times, threshold);
    let decay_rate = crate::integrate::fit_decay_rate(&traj.gamma, &traj.times, DECAY_FIT_FLOOR).ok();

    let (max_compat_defect, rank, solver) = if matches!(control, ControlSpec::Indirect { .. }) {
        let expected = expected_rank(model.agents, model.dim).ok();
        let last = traj.diagnostics.iter().flatten().last();
        let rank = match (expected, traj.diagnostics.iter().flatten().next()) {
            (Some(e), Some(first)) => Some(RankSummary {
                observed: first.rank,
                expected: e,
                matches: first.rank == e,
            }),
            _ => None,
        };
        let solver = last.map(|d| SolverSummary {
            sigma_max_final: d.sigma_max,
            sigma_min_final: d.sigma_min_positive,
            residual_final: d.residual_norm,
        });
        (Some(traj.max_compat_defect()), rank, solver)
    } else {
        (None, None, None)
    };

    let expectation_met = expect.as_ref().and_then(|e| {
        e.converges.map(|should| consensus_time.is_some() == should)
    });

    RunReport {
        name: name.to_string(),
        consensus_time,
        consensus_threshold: threshold,
        decay_rate,
        final_gamma: traj.final_gamma(),
        max_average_drift: traj.max_average_drift(),
        max_zero_sum_defect: traj.max_zero_sum_defect(),
        max_compat_defect,
        rank,
        solver,
        degenerate_from: traj.degenerate_from,
        expected: expect,
        expectation_met,
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Execute one simulation config and write all artifacts into `out_dir`.
pub fn execute_sim(name: &str, cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    let Job::Sim { model, kernel, sim, expect } = cfg.clone().into_job()? else {
        return Err(Error::Config(format!("'{name}' is a rank-table job, not a simulation")));
    };
    let traj = simulate(&model, &kernel, &sim)?;
    fs::create_dir_all(out_dir)?;
    output::write_gamma_csv(&out_dir.join("gamma.csv"), &traj)?;
    output::write_controls_csv(&out_dir.join("controls.csv"), &traj)?;
    output::write_trajectory_csv(&out_dir.join("trajectory.csv"), &traj)?;
    output::write_diagnostics_csv(&out_dir.join("diagnostics.csv"), &traj)?;
    let report = build_report(name, &model, &sim.control, expect, &traj);
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankRow {
    pub dim: usize,
    pub agents: usize,
    pub observed: usize,
    pub expected: usize,
    pub matches: bool,
}

/// Numerical rank of the indirect block system at a random generic state.
pub fn rank_at_random_state(agents: usize, dim: usize, seed: u64) -> Result<RankRow> {
    use crate::control::indirect::assemble_lb;
    use crate::integrate::{initial_state, IcSpec};

    let min_n = crate::lsq::min_agents(dim)?;
    if agents < min_n {
        return Err(Error::Config(format!(
            "rank scan needs N >= {min_n} for d = {dim}, got N = {agents}"
        )));
    }
    let model = ModelConfig::new(2, agents, dim)?;
    let ic = IcSpec::UniformBoxes { bounds: vec![(lit(-2.0), lit(2.0)); 2] };
    let state = initial_state::<f64>(&model, &ic, seed)?;
    let lb = assemble_lb(state.positions(), state.block(1), 1.0, 1.0)?;
    let observed = numerical_rank(&lb, &RankTolPolicy::default());
    let expected = expected_rank(agents, dim)?;
    Ok(RankRow { dim, agents, observed, expected, matches: observed == expected })
}

/// Execute a rank-table job: one row per dimension, written as
/// `rank_table.csv` plus `report.json`.
pub fn execute_rank_table(
    name: &str,
    agents: usize,
    dims: &[usize],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<RankRow>> {
    use std::io::Write;

    let rows: Vec<RankRow> = dims
        .iter()
        .map(|&d| rank_at_random_state(agents, d, seed))
        .collect::<Result<_>>()?;
    fs::create_dir_all(out_dir)?;
    let mut w = std::io::BufWriter::new(fs::File::create(out_dir.join("rank_table.csv"))?);
    writeln!(w, "dim,agents,observed,expected,matches")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{}", r.dim, r.agents, r.observed, r.expected, r.matches)?;
    }
    w.flush()?;
    write_json(
        &out_dir.join("report.json"),
        &serde_json::json!({ "name": name, "rows": rows }),
    )?;
    Ok(rows)
}

/// Outcome of a whole `run` invocation (a group preset yields several).
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum JobReport {
    Sim(RunReport),
    Rank { name: String, rows: Vec<RankRow> },
}

/// Run every config under its own subdirectory (or directly in `out_dir` for
/// a single run) and aggregate group reports.
pub fn execute_all(
    runs: &[(String, RunConfig)],
    out_dir: &Path,
) -> Result<Vec<JobReport>> {
    let mut reports = Vec::new();
    let nested = runs.len() > 1;
    for (name, cfg) in runs {
        let dir = if nested { out_dir.join(name) } else { out_dir.to_path_buf() };
        let report = match cfg.clone().into_job()? {
            Job::Sim { .. } => JobReport::Sim(execute_sim(name, cfg, &dir)?),
            Job::RankTable { agents, dims, seed } => JobReport::Rank {
                name: name.clone(),
                rows: execute_rank_table(name, agents, &dims, seed, &dir)?,
            },
        };
        reports.push(report);
    }
    if nested {
        write_json(&out_dir.join("report.json"), &reports)?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub consensus_time: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Largest listed lambda that converged (empirical stability edge).
    pub lambda_max_converged: Option<f64>,
}

/// Run the base config once per lambda (in parallel over `jobs` workers) and
/// tabulate convergence against `threshold` within the configured horizon.
pub fn sweep_lambda(
    base: &RunConfig,
    lambdas: &[f64],
    threshold: f64,
    jobs: usize,
    out_dir: &Path,
) -> Result<SweepReport> {
    use std::io::Write;

    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config("sweep threshold must be positive".into()));
    }
    let control = base
        .control
        .as_ref()
        .ok_or_else(|| Error::Config("sweep base config must be controlled".into()))?;
    if control.law == "none" {
        return Err(Error::Config("sweep base config must be controlled".into()));
    }
    // validate every point before any output is written
    let mut tasks = Vec::new();
    for &lambda in lambdas {
        let mut cfg = base.with_overrides(&[format!("control.lambda={lambda}")])?;
        // convergence is judged against the sweep threshold, not any
        // expectation baked into the base config
        let mut expect = cfg.expect.take().unwrap_or(ExpectSection {
            description: None,
            threshold: None,
            converges: None,
        });
        expect.threshold = Some(threshold);
        cfg.expect = Some(expect);
        cfg.clone().into_job()?;
        tasks.push((lambda, cfg));
    }
    fs::create_dir_all(out_dir)?;

    let queue: Mutex<VecDeque<(usize, f64, RunConfig)>> = Mutex::new(
        tasks
            .into_iter()
            .enumerate()
            .map(|(i, (l, c))| (i, l, c))
            .collect(),
    );
    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..lambdas.len()).map(|_| None).collect());
    let workers = jobs.max(1).min(lambdas.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().pop_front();
                let Some((idx, lambda, cfg)) = task else { break };
                let dir = out_dir.join(format!("lambda_{lambda}"));
                let row = execute_sim(&format!("lambda_{lambda}"), &cfg, &dir).map(|report| {
                    SweepRow {
                        lambda,
                        consensus_time: report.consensus_time,
                        converged: report.consensus_time.is_some(),
                    }
                });
                results.lock().unwrap()[idx] = Some(row);
            });
        }
    });

    let mut rows = Vec::with_capacity(lambdas.len());
    for slot in results.into_inner().unwrap() {
        rows.push(slot.expect("worker filled every slot")?);
    }
    let lambda_max_converged = rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.lambda)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))));

    let mut w = std::io::BufWriter::new(fs::File::create(out_dir.join("sweep.csv"))?);
    writeln!(w, "lambda,consensus_time,converged")?;
    for r in &rows {
        let t = r.consensus_time.map(fmt_f64).unwrap_or_default();
        writeln!(w, "{},{},{}", fmt_f64(r.lambda), t, r.converged)?;
    }
    w.flush()?;
    let report = SweepReport { rows, lambda_max_converged };
    write_json(&out_dir.join("sweep.json"), &report)?;
    Ok(report)
}

/// Resolve the output root: explicit flag, else `ZC_OUT_DIR`, else `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, env: Option<String>) -> PathBuf {
    flag.or_else(|| env.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> RunConfig {
        RunConfig::from_toml(
            r#"
[model]
order = 1
agents = 6
dim = 2

[kernel]
family = "smoothed_hk"
alpha = 1.6

[sim]
dt = 1e-2
t_end = 16.0
record_every = 10

[control]
law = "direct"
lambda = 1.0

[ic]
boxes = [[-2.0, 2.0]]
"#,
        )
        .unwrap()
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let report = execute_sim("quick", &quick_cfg(), dir.path()).unwrap();
        for f in ["gamma.csv", "controls.csv", "trajectory.csv", "diagnostics.csv", "report.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(report.consensus_time.is_some());
        let rate = report.decay_rate.unwrap();
        assert!((rate + 2.0).abs() < 0.05, "rate {rate}");
        assert!(report.max_average_drift <= 1e-8);
    }

    #[test]
    fn gamma_csv_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        execute_sim("quick", &quick_cfg(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,gamma");
        let cfg = quick_cfg();
        let Job::Sim { model, kernel, sim, .. } = cfg.into_job().unwrap() else { unreachable!() };
        let traj = simulate(&model, &kernel, &sim).unwrap();
        for (line, (t, g)) in lines.zip(traj.times.iter().zip(&traj.gamma)) {
            let (ts, gs) = line.split_once(',').unwrap();
            assert_eq!(ts.parse::<f64>().unwrap().to_bits(), t.to_bits());
            assert_eq!(gs.parse::<f64>().unwrap().to_bits(), g.to_bits());
        }
    }

    #[test]
    fn rank_table_desk_scale() {
        let dir = tempfile::tempdir().unwrap();
        let rows = execute_rank_table("rank", 20, &[2, 3], 0, dir.path()).unwrap();
        assert_eq!(rows[0].observed, 20 * 2 - 3);
        assert_eq!(rows[1].observed, 20 * 3 - 6);
        assert!(rows.iter().all(|r| r.matches));
        assert!(dir.path().join("rank_table.csv").exists());
    }

    #[test]
    fn group_runs_into_subdirectories() {
        let dir = tempfile::tempdir().unwrap();
        let runs = vec![("a".to_string(), quick_cfg()), ("b".to_string(), quick_cfg())];
        let reports = execute_all(&runs, dir.path()).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(dir.path().join("a/gamma.csv").exists());
        assert!(dir.path().join("b/report.json").exists());
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn sweep_times_scale_inversely() {
        let dir = tempfile::tempdir().unwrap();
        let report =
            sweep_lambda(&quick_cfg(), &[0.5, 1.0, 2.0], 1e-6, 3, dir.path()).unwrap();
        assert!(report.rows.iter().all(|r| r.converged));
        assert_eq!(report.lambda_max_converged, Some(2.0));
        let t0 = report.rows[0].consensus_time.unwrap();
        let t2 = report.rows[2].consensus_time.unwrap();
        // direct control: time-to-threshold is proportional to 1/lambda
        assert!((t0 / t2 - 4.0).abs() < 0.8, "ratio {}", t0 / t2);
        assert!(dir.path().join("sweep.csv").exists());
        assert!(dir.path().join("lambda_0.5/gamma.csv").exists());
    }

    #[test]
    fn sweep_rejects_uncontrolled_base() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg();
        cfg.control = None;
        assert!(sweep_lambda(&cfg, &[1.0], 1e-6, 1, dir.path()).is_err());
    }

    #[test]
    fn out_dir_resolution_order() {
        assert_eq!(
            resolve_out_dir(Some("x".into()), Some("y".into())),
            PathBuf::from("x")
        );
        assert_eq!(resolve_out_dir(None, Some("y".into())), PathBuf::from("y"));
        assert_eq!(resolve_out_dir(None, None), PathBuf::from("out"));
    }
}
