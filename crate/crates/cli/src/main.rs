//! Command-line runner for the batch experiments.
//!
//! Each run subcommand starts from the built-in preset for its experiment (or
//! from `--config`), applies flag overrides, runs, and writes
//! `<experiment>.csv`, auxiliary tables, `summary.json` and `manifest.json`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 numerical
//! failure in strict mode.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otfs_dfrc::harness::{self, preset, ExperimentConfig, ExperimentKind};
use otfs_dfrc::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "otfs-dfrc", version, about = "MIMO OTFS dual-function radar-communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Angle DFT and 2D cross-correlation on well-separated targets.
    CoarseRadar(RunArgs),
    /// Virtual-array sparse recovery with grid refinement.
    SsrRadar(RunArgs),
    /// Monte Carlo detection probability over N_p and separation.
    DetectMc(RunArgs),
    /// BER, SER and rate loss of the communication link.
    CommRate(RunArgs),
    /// Parse and check a configuration file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON experiment configuration; defaults to the built-in preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo and communication trial counts.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; defaults to `output.dir` or `results/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Fail with exit code 3 when any solver run does not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: format!("configuration error: {e}") }
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::SingularMatrix { .. } | Error::NonFinite(_) | Error::NotConverged { .. } | Error::CapExceeded { .. }
    )
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path).map_err(Failure::config)?,
        None => preset(kind),
    };
    if cfg.experiment != kind {
        return Err(Failure::config(format!(
            "{} holds a '{}' experiment, not '{}'",
            args.config.as_deref().unwrap_or(Path::new("config")).display(),
            cfg.experiment.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.monte_carlo.trials = trials;
        cfg.comm.trials = trials;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = Some(out.clone());
    }
    cfg.output.strict |= args.strict;
    if args.threads == Some(0) {
        return Err(Failure::config("--threads must be >= 1"));
    }
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<(), Failure> {
    let cfg = load(kind, args)?;
    let strict = cfg.output.strict;
    let execute = || harness::run(&cfg);
    let result = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("thread pool: {e}") })?
            .install(execute),
        None => execute(),
    };
    let output = result.map_err(|e| {
        let code = if strict && is_numerical(&e) { EXIT_NUMERICAL } else { EXIT_RUNTIME };
        Failure { code, message: e.to_string() }
    })?;

    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("results").join(kind.name()));
    let files = harness::write_outputs(&dir, &cfg, &output)
        .map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("writing {}: {e}", dir.display()) })?;
    println!("{}", serde_json::to_string_pretty(&output.summary).unwrap_or_default());
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    if strict && output.non_converged > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{} solver runs did not converge (strict mode)", output.non_converged),
        });
    }
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::from_path(path).map_err(Failure::config)?;
    println!("ok: {} experiment, seed {}, config sha256 {}", cfg.experiment.name(), cfg.scenario.seed, cfg.hash());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CoarseRadar(a) => run(ExperimentKind::CoarseRadar, a),
        Command::SsrRadar(a) => run(ExperimentKind::SsrRadar, a),
        Command::DetectMc(a) => run(ExperimentKind::DetectMc, a),
        Command::CommRate(a) => run(ExperimentKind::CommRate, a),
        Command::ValidateConfig { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
