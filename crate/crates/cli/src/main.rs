use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sddelab_cli::{resolve_threads, run_file, validate, ExperimentConfig, ExperimentKind, RunError, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "sddelab", version, about = "Simulation and bound-verification runs for singular-drift SDDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Worker threads (defaults to SDDELAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    Simulate(RunArgs),
    VerifyBound(RunArgs),
    Stability(RunArgs),
    Zvonkin(RunArgs),
    Maximal(RunArgs),
    Gronwall(RunArgs),
    Krylov(RunArgs),
    /// Reports every violated constraint without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(e: &RunError) -> ExitCode {
    println!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json"));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Validate { config } => {
            return match ExperimentConfig::load(&config) {
                Ok(cfg) => {
                    let violations = validate(&cfg);
                    let ok = violations.is_empty();
                    let body = serde_json::json!({"valid": ok, "violations": violations});
                    println!("{}", serde_json::to_string_pretty(&body).expect("json"));
                    if ok {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(&e),
            };
        }
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::VerifyBound(a) => (ExperimentKind::VerifyBound, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::Zvonkin(a) => (ExperimentKind::Zvonkin, a),
        Command::Maximal(a) => (ExperimentKind::Maximal, a),
        Command::Gronwall(a) => (ExperimentKind::Gronwall, a),
        Command::Krylov(a) => (ExperimentKind::Krylov, a),
    };
    match ExperimentConfig::load(&args.config) {
        Ok(cfg) if cfg.experiment != kind => {
            return fail(&RunError::Validation(vec![sddelab_cli::Violation {
                field: "experiment".into(),
                message: format!(
                    "config declares {} but the {} subcommand was used",
                    cfg.experiment.name(),
                    kind.name()
                ),
            }]));
        }
        Err(e) => return fail(&e),
        Ok(_) => {}
    }
    let opts = RunOptions {
        out_dir: args.out,
        threads: resolve_threads(args.threads),
    };
    match run_file(&args.config, args.seed, &opts) {
        Ok(outcome) => {
            let body = serde_json::json!({
                "run_dir": outcome.run_dir.display().to_string(),
                "manifest": outcome.manifest,
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
