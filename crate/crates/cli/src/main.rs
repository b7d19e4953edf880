use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use detfree_gp_cli::config::ExperimentKind;
use detfree_gp_cli::experiments::{diagnose, run_experiment};
use detfree_gp_cli::output::FAILURE_FILE;
use detfree_gp_cli::{ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "detfree", version, about = "Determinant-free HMC for GP kernel hyperparameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set sampler.dt=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as `--set experiment.output=...`).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare samplers against a quadrature reference posterior.
    Verify(RunArgs),
    /// Measure seconds per step across problem sizes.
    Scale(RunArgs),
    /// Sample hyperparameters and write chain traces.
    Sample(RunArgs),
    /// Posterior predictive mean and standard deviation on a grid.
    Predict(RunArgs),
    /// Recompute diagnostics from a stored run directory.
    Diagnose {
        dir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        window_constant: f64,
    },
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut overrides = vec![format!("experiment.kind=\"{}\"", kind_name(kind))];
    if let Some(o) = &args.output {
        overrides.push(format!("experiment.output={}", toml_string(&o.to_string_lossy())));
    }
    overrides.extend(args.overrides.iter().cloned());
    match &args.config {
        Some(p) => ExperimentConfig::load(p, &overrides),
        None => ExperimentConfig::with_overrides("", &overrides),
    }
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Verify => "verify",
        ExperimentKind::Scale => "scale",
        ExperimentKind::Sample => "sample",
        ExperimentKind::Predict => "predict",
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.into()).to_string()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (kind, args) = match &cli.command {
        Command::Verify(a) => (ExperimentKind::Verify, a),
        Command::Scale(a) => (ExperimentKind::Scale, a),
        Command::Sample(a) => (ExperimentKind::Sample, a),
        Command::Predict(a) => (ExperimentKind::Predict, a),
        Command::Diagnose { dir, window_constant } => {
            let iat = detfree_gp::diagnostics::IatConfig { window_constant: *window_constant, ..Default::default() };
            let p = diagnose(dir, &iat)?;
            println!("{}", p.display());
            return Ok(());
        }
    };
    let cfg = load(kind, args)?;
    match run_experiment(&cfg) {
        Ok(art) => {
            for f in &art.files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Err(e) => {
            let report = cfg.experiment.output.join(FAILURE_FILE);
            if cfg.experiment.output.is_dir() {
                let _ = std::fs::write(&report, format!("{e}\n"));
            }
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
