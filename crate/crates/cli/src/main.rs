//! `cortexalign` command line driver.

mod commands;
mod config;
mod provenance;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cortexalign::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(
    name = "cortexalign",
    version,
    about = "Brain and language-model alignment analyses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 or unset uses all cores.
    #[arg(long, global = true, env = "CORTEXALIGN_THREADS")]
    threads: Option<usize>,

    /// Also emit SVG plots (report only).
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate,
    /// Build HRF-convolved design matrices.
    Design,
    /// Leave-one-run-out ridge encoding scores.
    Encode,
    /// One-sample significance maps per layer.
    GroupMap,
    /// Pairwise layer sign-flip comparisons.
    LayerCompare,
    /// Sign-flip and mixed-model comparison of two models.
    ModelCompare,
    /// Three-language overlap categories.
    Overlap,
    /// Preferred layer per ROI.
    PreferredLayer,
    /// Layer profiles averaged within networks.
    Networks,
    /// Cross-language map convergence.
    Convergence,
    /// Intrinsic dimension of layer embeddings.
    Id,
    /// Word surprisal from token tables.
    Surprisal,
    /// Collate figure tables and plots.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Design => "design",
            Command::Encode => "encode",
            Command::GroupMap => "group-map",
            Command::LayerCompare => "layer-compare",
            Command::ModelCompare => "model-compare",
            Command::Overlap => "overlap",
            Command::PreferredLayer => "preferred-layer",
            Command::Networks => "networks",
            Command::Convergence => "convergence",
            Command::Id => "id",
            Command::Surprisal => "surprisal",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Config => ("config", 1),
                ErrorClass::Io => ("io", 1),
                ErrorClass::Numeric => ("numeric", 2),
            };
            let msg = serde_json::json!({
                "error": {
                    "class": class,
                    "subcommand": cli.command.name(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> cortexalign::Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::Invalid("--out <dir> is required".into()))?;
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context {
        config: cli.config.clone(),
        out,
        seed: cli.seed,
        plots: cli.plots,
    };
    commands::dispatch(cli.command, &ctx)
}
