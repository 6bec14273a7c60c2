use clap::{Args, Parser, Subcommand};
use fdp_cli::config::{defaults_table, ExperimentConfig, Kind};
use fdp_cli::error::CliError;
use fdp_cli::experiments;
use fdp_cli::output::OutputDir;
use std::path::PathBuf;
use std::process::ExitCode;

/// Federated private density estimation experiments.
#[derive(Parser, Debug)]
#[command(name = "fdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One round: truth, aggregate, estimate and Monte Carlo risk.
    Simulate(RunArgs),
    /// Global risk over a sweep with a log-log rate fit.
    RateSweep(RunArgs),
    /// Pointwise TTPW risk over a sweep with a log-log rate fit.
    PointwiseSweep(RunArgs),
    /// Tail curves of averaged privacy noise.
    Tails(RunArgs),
    /// Super-efficiency of the private Hodge estimator.
    Hodge(RunArgs),
    /// Sensitivity, norm, sampler, oracle and tail property checks.
    Verify(RunArgs),
    /// Print every config key with its default.
    ListDefaults,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config; keys left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<kind>-<hash prefix>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "FDP_THREADS")]
    threads: Option<usize>,
}

fn prepare(kind: Kind, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if args.config.is_some() && cfg.kind != kind {
        return Err(CliError::Validation(format!(
            "config kind {} does not match the subcommand",
            serde_json::to_string(&cfg.kind).unwrap_or_default()
        )));
    }
    cfg.kind = kind;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.display().to_string());
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: Kind, args: &RunArgs) -> Result<(), CliError> {
    let cfg = prepare(kind, args)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let hash = cfg.hash();
    let dir = cfg.out.clone().map(PathBuf::from).unwrap_or_else(|| {
        let tag = serde_json::to_value(cfg.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        PathBuf::from("out").join(format!("{tag}-{}", &hash[..12]))
    });
    let mut out = OutputDir::create(&dir, &hash)?;
    let summary = experiments::run(&cfg, &mut out).map_err(CliError::into_runtime)?;
    print!("{summary}");
    if !summary.ends_with('\n') {
        println!();
    }
    eprintln!("wrote {} files to {}", out.files().len(), out.path().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => execute(Kind::Simulate, a),
        Command::RateSweep(a) => execute(Kind::RateSweep, a),
        Command::PointwiseSweep(a) => execute(Kind::PointwiseSweep, a),
        Command::Tails(a) => execute(Kind::Tails, a),
        Command::Hodge(a) => execute(Kind::Hodge, a),
        Command::Verify(a) => execute(Kind::Verify, a),
        Command::ListDefaults => {
            for (k, v, note) in defaults_table() {
                println!("{k:<18} {v:<12} {note}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fdp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
