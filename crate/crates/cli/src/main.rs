use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use society_core::runner::{
    cmd_analyze, cmd_mbti, cmd_run, cmd_sweep, AnalyzeOutcome, Config, Overrides, RunnerError,
};
use society_core::Execution;
use tracing_subscriber::EnvFilter;

/// Language-model agent society simulator and metrics harness.
#[derive(Parser)]
#[command(name = "society", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation into a fresh directory.
    Run(RunArgs),
    /// Run every (range, trial) pair of the sweep section.
    Sweep(RunArgs),
    /// Recompute metric files of a run or sweep directory from its transcripts.
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Administer the personality questionnaire on a finished run.
    Mbti {
        dir: PathBuf,
        /// Completed-step count to snapshot; repeat for several.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<u32>,
        /// Question bank file (one JSON object per line).
        #[arg(long)]
        bank: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (must be empty or absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    range: Option<u32>,
    #[arg(long)]
    steps: Option<u32>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Disable data-parallel execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct BackendArgs {
    /// `remote` or `scripted`.
    #[arg(long = "backend")]
    kind: Option<String>,
    /// Chat-completions URL for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<Config, RunnerError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            range: self.range,
            steps: self.steps,
            backend_kind: self.backend.kind.clone(),
            endpoint: self.backend.endpoint.clone(),
            script: self.backend.script.clone(),
            sequential: self.sequential,
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let out = cmd_run(&cfg, &args.out)?;
            println!(
                "run complete: {} steps x {} agents -> {}",
                out.transcript.num_steps(),
                out.transcript.num_agents(),
                out.dir.display()
            );
            println!(
                "unique hashtags {}, hallucinations {}, stay events {}",
                out.metrics.unique_hashtags(),
                out.metrics.hallucinations.events.len(),
                out.metrics.stays.len()
            );
            for c in &out.mbti {
                println!("mbti step {}: {}", c.checkpoint, c.types().join(" "));
            }
        }
        Command::Sweep(args) => {
            let cfg = args.config()?;
            let out = cmd_sweep(&cfg, &args.out)?;
            let total = out.manifest.trials.len();
            println!("sweep: {}/{total} trials completed -> {}", out.completed(), out.dir.display());
            for t in out.manifest.trials.iter().filter(|t| t.error.is_some()) {
                eprintln!("  range {} trial {} failed: {}", t.range, t.trial, t.error.as_deref().unwrap_or(""));
            }
            if out.completed() == 0 {
                return Err(RunnerError::Backend("every trial failed".into()));
            }
        }
        Command::Analyze { dir, sequential } => {
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            match cmd_analyze(&dir, exec)? {
                AnalyzeOutcome::Run(m) => println!(
                    "metrics rewritten in {} ({} unique hashtags)",
                    dir.display(),
                    m.unique_hashtags()
                ),
                AnalyzeOutcome::Sweep(n) => println!("{n} trials re-analyzed in {}", dir.display()),
            }
        }
        Command::Mbti {
            dir,
            checkpoints,
            bank,
            backend,
        } => {
            let overrides = Overrides {
                backend_kind: backend.kind,
                endpoint: backend.endpoint,
                script: backend.script,
                ..Default::default()
            };
            let results = cmd_mbti(&dir, &checkpoints, &overrides, bank.as_deref().map(Path::new))?;
            for c in results.iter().filter(|c| checkpoints.contains(&c.checkpoint)) {
                println!("step {}: {}", c.checkpoint, c.types().join(" "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
