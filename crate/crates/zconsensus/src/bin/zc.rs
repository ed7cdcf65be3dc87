//! Command-line front end: runs, sweeps, preset inspection, and validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zconsensus::cli::{
    self, execute_all, presets, resolve_out_dir, sweep_lambda, Preset, RunConfig,
};
use zconsensus::Error;

#[derive(Parser)]
#[command(name = "zc", about = "k-th order consensus dynamics under Z-control", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Embedded preset name (see `zc presets list`)
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sim.dt=5e-4` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the random seed (shorthand for `--set sim.seed=...`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory (default: $ZC_OUT_DIR, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one preset or config and write CSV/JSON artifacts
    Run {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a controlled preset/config across several lambda values
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Comma-separated lambda values
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Gamma threshold defining convergence
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
        /// Worker threads (default: available parallelism)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Inspect embedded presets
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
    /// Check a preset or config without running it
    Validate {
        #[command(flatten)]
        source: SourceArgs,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    /// List all embedded presets
    List,
    /// Print a preset as a TOML config document
    Show { name: String },
}

fn load_runs(source: &SourceArgs) -> Result<Vec<(String, RunConfig)>, Error> {
    let mut runs = match (&source.preset, &source.config) {
        (Some(name), None) => presets::resolve(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            vec![(stem, RunConfig::from_toml(&text)?)]
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --preset or --config is required".into(),
            ))
        }
    };
    let mut overrides = source.set.clone();
    if let Some(seed) = source.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    for (_, cfg) in &mut runs {
        *cfg = cfg.with_overrides(&overrides)?;
        // fail fast on any constraint violation before artifacts are written
        cfg.clone().into_job()?;
    }
    Ok(runs)
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::InsufficientData(_) => ExitCode::from(2),
        Error::Blowup { .. } | Error::NonFinite(_) => ExitCode::from(3),
        Error::Io(_) => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { source, out } => {
            let runs = load_runs(&source)?;
            let dir = resolve_out_dir(out.out, std::env::var("ZC_OUT_DIR").ok());
            let reports = execute_all(&runs, &dir)?;
            for report in &reports {
                match report {
                    cli::JobReport::Sim(r) => {
                        let ct = r
                            .consensus_time
                            .map(|t| format!("{t:.3}"))
                            .unwrap_or_else(|| "none".into());
                        println!(
                            "{}: final_gamma = {:.3e}, consensus_time = {ct}",
                            r.name, r.final_gamma
                        );
                    }
                    cli::JobReport::Rank { name, rows } => {
                        for row in rows {
                            println!(
                                "{name}: d = {}, rank {} (expected {}, {})",
                                row.dim,
                                row.observed,
                                row.expected,
                                if row.matches { "match" } else { "MISMATCH" }
                            );
                        }
                    }
                }
            }
            println!("artifacts written to {}", dir.display());
            Ok(())
        }
        Command::Sweep { source, out, lambdas, threshold, jobs } => {
            let runs = load_runs(&source)?;
            if runs.len() != 1 {
                return Err(Error::Config("sweep needs a single-run preset or config".into()));
            }
            let dir = resolve_out_dir(out.out, std::env::var("ZC_OUT_DIR").ok());
            let jobs = jobs
                .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
                .unwrap_or(1);
            let report = sweep_lambda(&runs[0].1, &lambdas, threshold, jobs, &dir)?;
            for row in &report.rows {
                let ct = row
                    .consensus_time
                    .map(|t| format!("{t:.3}"))
                    .unwrap_or_else(|| "none".into());
                println!(
                    "lambda = {}: consensus_time = {ct}, converged = {}",
                    row.lambda, row.converged
                );
            }
            match report.lambda_max_converged {
                Some(l) => println!("largest converging lambda: {l}"),
                None => println!("no lambda in the list converged"),
            }
            Ok(())
        }
        Command::Presets { action } => match action {
            PresetsAction::List => {
                for entry in presets::registry() {
                    let kind = match entry.preset {
                        Preset::Single(_) => "",
                        Preset::Group(_) => " (group)",
                    };
                    println!("{:<24} {}{kind}", entry.name, entry.summary);
                }
                Ok(())
            }
            PresetsAction::Show { name } => match presets::find(&name)?.preset {
                Preset::Single(cfg) => {
                    print!("{}", cfg.to_toml());
                    Ok(())
                }
                Preset::Group(members) => {
                    println!("# group preset '{name}'; members:");
                    for m in members {
                        println!("#   {m}");
                    }
                    Ok(())
                }
            },
        },
        Command::Validate { source } => {
            let runs = load_runs(&source)?;
            for (name, _) in &runs {
                println!("{name}: ok");
            }
            Ok(())
        }
    }
}
