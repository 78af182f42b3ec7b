use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "bevmap", version, about = "Synthetic BEV map learning: data, training, vectorization and evaluation")]
struct Cli {
    /// BEV extent JSON (`{x_min, x_max, y_min, y_max, pitch}`).
    #[arg(long, global = true)]
    bev: Option<PathBuf>,
    /// Camera rig JSON (`{"cameras": [...]}`).
    #[arg(long, global = true)]
    rig: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a synthetic dataset and write a parameter bundle.
    Train(TrainArgs),
    /// Run a trained bundle on every scene of a dataset.
    Infer(InferArgs),
    /// Turn dense predictions into polylines.
    Vectorize(VectorizeArgs),
    /// Compare predicted maps against ground truth.
    Eval(EvalArgs),
    /// Project a perspective grid onto the BEV ground plane.
    Ipm(IpmArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Scene distribution JSON; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Model configuration JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Parameter bundle directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct VectorizeArgs {
    /// Prediction directory from `infer` (one scene or a directory of scenes).
    #[arg(long, conflicts_with = "ideal", required_unless_present = "ideal")]
    pred: Option<PathBuf>,
    /// Use ideal grids built from the labels of this dataset instead.
    #[arg(long)]
    ideal: Option<PathBuf>,
    /// Vectorization parameters JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Embedding width of the ideal grids.
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// A VectorMap JSON file or a directory of scenes holding `map.json`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Chamfer thresholds for AP, meters, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 1.0])]
    thresholds: Vec<f64>,
}

#[derive(Args, Debug)]
struct IpmArgs {
    /// BVG1 perspective grid.
    #[arg(long)]
    image: PathBuf,
    /// Rig camera that produced the image.
    #[arg(long)]
    camera: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
