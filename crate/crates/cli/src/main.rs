//! `kbuf`: synthesize scenes, rasterize K-buffers, train, render, evaluate
//! and run ablation sweeps.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "kbuf", version, about = "K-deep z-buffer neural point rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: cloud.ply, cameras.json and gt/*.png.
    Synth(SynthArgs),
    /// Dump one view's K-buffer and per-layer depth images.
    Rasterize(RasterizeArgs),
    /// Train a model and write a checkpoint plus per-step metrics.
    Train(TrainArgs),
    /// Render the test views of a checkpoint.
    Render(CkptArgs),
    /// Score a checkpoint on the test views.
    Eval(CkptArgs),
    /// Run a K, module or d_m sweep.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct SynthArgs {
    #[arg(long, default_value = "textured-sphere")]
    kind: String,
    #[arg(long, default_value_t = 20_000)]
    points: usize,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the Gaussian position jitter, in world units.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Fraction of points dropped at random.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct RasterizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Splat radius; defaults to the scene's recorded value.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Flat JSON training configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured step count.
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Log every N steps to stderr (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct CkptArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Must agree with the checkpoint's architecture when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Sweep {
    K,
    Modules,
    Dm,
}

#[derive(Args, Debug, serde::Serialize)]
struct AblateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    sweep: Sweep,
    /// Layer counts for `--sweep k`.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    ks: Vec<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("KBUF_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| anyhow::anyhow!("KBUF_THREADS must be a positive integer, got {v:?}"))?;
    anyhow::ensure!(n > 0, "KBUF_THREADS must be positive");
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        init_threads()?;
        match cli.command {
            Command::Synth(a) => commands::synth(&a),
            Command::Rasterize(a) => commands::rasterize(&a),
            Command::Train(a) => commands::train(&a),
            Command::Render(a) => commands::render(&a),
            Command::Eval(a) => commands::eval(&a),
            Command::Ablate(a) => commands::ablate(&a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
