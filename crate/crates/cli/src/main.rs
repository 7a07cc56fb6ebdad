//! `meshformer` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 malformed or missing data,
//! 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meshformer::datagen::FamilyKind;
use meshformer::model::AttentionMode;
use meshformer::training::Precision;

#[derive(Parser, Debug)]
#[command(
    name = "meshformer",
    version,
    about = "Mesh transformer for flow forecasting on dynamic meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Precompute cluster assignments for every trajectory of a dataset.
    Cluster(ClusterArgs),
    /// Compute normalization statistics over the training split.
    Stats(StatsArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the persistence baseline) on a split.
    Eval(EvalArgs),
    /// Autoregressive forecast of one trajectory.
    Rollout(RolloutArgs),
    /// Dump the attention maps of one forward step.
    Attn(AttnArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write default model, training and generator configs.
    Defaults(DefaultsArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// JSON generator config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// taylor-green, vortex, rotor-wake or mixed.
    #[arg(long)]
    family: Option<FamilyKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_traj: Option<usize>,
    /// Frames per trajectory.
    #[arg(long)]
    steps: Option<usize>,
    /// Target node count per mesh.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Taylor–Green viscosity.
    #[arg(long)]
    nu: Option<f64>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target cluster size.
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Lower bound applied to each standard deviation.
    #[arg(long, default_value_t = 1e-8)]
    floor: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON model config; defaults are used for missing fields.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// JSON training config; defaults are used for missing fields.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Checkpoint written at the end (and every --checkpoint-every steps).
    #[arg(long)]
    out: PathBuf,
    /// Omit wall-clock times from the log so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Normalization statistics (JSON); computed from the train split if absent.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// JSON-lines training log; stdout if absent.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    attention_mode: Option<AttentionMode>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma-separated horizons, e.g. "1,10,50".
    #[arg(long, value_delimiter = ',', required = true)]
    horizons: Vec<usize>,
    /// Report path; `.csv` writes the CSV table, anything else JSON.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate the checkpoint with a different attention mode.
    #[arg(long)]
    ablation: Option<AttentionMode>,
    /// Keep this fraction of interior nodes in every frame.
    #[arg(long)]
    downsample: Option<f64>,
    /// Report the persistence baseline instead of the model.
    #[arg(long)]
    persistence: bool,
    /// Split to evaluate: train, valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Seed of downsampling and pooling order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Trajectory file (`trajectory.bin` with its `meta.json`).
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    steps: usize,
    /// Output trajectory; its `meta.json` is written alongside.
    #[arg(long)]
    out: PathBuf,
    /// Frame the forecast starts from.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AttnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Frame fed to the model.
    #[arg(long)]
    step: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write one grayscale PNG per block and head here.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Attention mass threshold of the k-number.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long)]
    ablation: Option<AttentionMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// JSON model config; the tiny config if absent.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct DefaultsArgs {
    /// Directory receiving model.json, train.json and gen.json.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Attn(a) => commands::attn(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Defaults(a) => commands::defaults(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
