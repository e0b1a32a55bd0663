//! `meshsal` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meshsal::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "meshsal",
    version,
    about = "Mesh saliency: ground truth, prediction, evaluation, simplification"
)]
struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for sampling, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gaze logs to a per-face ground-truth saliency map.
    GenGt(commands::GenGt),
    /// Scripted gaze log that fixates chosen faces for chosen durations.
    Synth(commands::Synth),
    /// Dump per-face geometry (and texture) features.
    Features(commands::Features),
    /// Train a model and save the best checkpoint.
    Train(commands::Train),
    /// Predict a saliency map with a checkpoint.
    Predict(commands::Predict),
    /// Compare a predicted map against ground truth.
    Eval(commands::Eval),
    /// Saliency-weighted edge-collapse simplification.
    Simplify(commands::Simplify),
    /// Forward FLOPs over a grid of patch counts and sizes.
    Flops(commands::Flops),
    /// Train the full model and each listed component switched off.
    Ablate(commands::Ablate),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenGt(_) => "gen-gt",
            Command::Synth(_) => "synth",
            Command::Features(_) => "features",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Simplify(_) => "simplify",
            Command::Flops(_) => "flops",
            Command::Ablate(_) => "ablate",
        }
    }
}

fn run(cli: Cli) -> meshsal::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| meshsal::Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let ctx = commands::Context {
        command: cli.command.name(),
        cfg,
    };
    match cli.command {
        Command::GenGt(a) => a.run(&ctx),
        Command::Synth(a) => a.run(&ctx),
        Command::Features(a) => a.run(&ctx),
        Command::Train(a) => a.run(&ctx),
        Command::Predict(a) => a.run(&ctx),
        Command::Eval(a) => a.run(&ctx),
        Command::Simplify(a) => a.run(ctx),
        Command::Flops(a) => a.run(&ctx),
        Command::Ablate(a) => a.run(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
