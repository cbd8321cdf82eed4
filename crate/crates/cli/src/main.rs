//! `luti`: bake, embed, register, train, evaluate and benchmark lattice embeddings.
//!
//! Machine-readable output goes to stdout, logs to stderr. Exit codes: 0 success, 1 usage
//! error, 2 data or model error. `LUTI_THREADS` caps worker threads.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use luti_core::EmbedMode;

#[derive(Parser, Debug)]
#[command(name = "luti", version, about = "Lattice-interpolated point embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a model's embedding MLP at every lattice node and write a LUT file.
    Bake(BakeArgs),
    /// Embed every point of a cloud through a LUT; one row of K values per point.
    Embed(EmbedArgs),
    /// Register a source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Train a classification variant.
    Train(TrainArgs),
    /// Classification accuracy of a model on a dataset.
    Eval(EvalArgs),
    /// Time embedding or pose-Jacobian kernels.
    Bench(BenchArgs),
    /// Sample chosen channels of a LUT on a z-slice.
    DumpSlice(DumpSliceArgs),
    /// Memory needed for a D^M lattice with K parameters per node.
    MemEstimate(MemEstimateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Uniform,
    Irregular,
    Nearest,
}

impl From<ModeArg> for EmbedMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Uniform => EmbedMode::Uniform,
            ModeArg::Irregular => EmbedMode::Irregular,
            ModeArg::Nearest => EmbedMode::Nearest,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum JacArg {
    FdmMlp,
    FdmLuti,
    AnalyticLuti,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Embedding,
    Jacobian,
}

#[derive(Args, Debug)]
struct BakeArgs {
    /// Model file with an MLP or lattice embedding.
    #[arg(long)]
    model: PathBuf,
    /// Lattice nodes per axis.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    lut: PathBuf,
    /// Point cloud (.xyz or .off).
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long, value_enum, default_value = "irregular")]
    mode: ModeArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// LUT for the fdm-luti and analytic-luti Jacobians.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Model whose embedding MLP drives fdm-mlp.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    source: PathBuf,
    /// Target cloud; when omitted the source is warped by a random transform drawn from
    /// --seed and the error to that transform is reported.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "analytic-luti")]
    jac: JacArg,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 0.01)]
    t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "irregular")]
    mode: ModeArg,
    /// Largest rotation in degrees of the random transform.
    #[arg(long, default_value_t = 45.0)]
    max_angle: f64,
    /// Largest translation of the random transform.
    #[arg(long, default_value_t = 0.3)]
    max_trans: f64,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// `synth` or `dir:PATH`.
    #[arg(long, default_value = "synth")]
    dataset: String,
    /// Points per cloud.
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Synthetic training clouds per class.
    #[arg(long, default_value_t = 250)]
    train_per_class: usize,
    /// Synthetic test clouds per class.
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// One of the registered variants, e.g. mlp_baseline or luti_irr_e2e.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 256)]
    k: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DatasetArgs,
    /// Weight of the smoothness penalty for directly trained tables.
    #[arg(long, default_value_t = 1.0)]
    lambda_tv: f64,
    /// Exponent of the smoothness penalty (1 or 2).
    #[arg(long, default_value_t = 2)]
    tv_p: u32,
    /// Fraction of epochs trained as a plain MLP before switching to the lattice.
    #[arg(long, default_value_t = 0.0)]
    pretrain_frac: f64,
    /// Trained baseline reused by the approximation variants.
    #[arg(long)]
    base_model: Option<PathBuf>,
    /// Per-epoch records as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Replace the model's embedding by this LUT.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Interpolation mode for --lut; defaults to the model's own mode, else irregular.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 1024)]
    k: usize,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    /// Seed of the random embedding MLP.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpSliceArgs {
    #[arg(long)]
    lut: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    z: f64,
    /// Comma-separated channel ids.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    channels: Vec<usize>,
    /// Samples per axis.
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, value_enum, default_value = "irregular")]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct MemEstimateArgs {
    #[arg(long)]
    d: u64,
    /// Lattice dimension.
    #[arg(long, default_value_t = 3)]
    m: u32,
    #[arg(long)]
    k: u64,
    /// Bytes per stored parameter.
    #[arg(long, default_value_t = 4)]
    bytes: u64,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(luti_core::Error),
}

impl From<luti_core::Error> for CliError {
    fn from(e: luti_core::Error) -> Self {
        match e {
            luti_core::Error::InvalidArgument(m) => CliError::Usage(m),
            e @ luti_core::Error::UnknownName { .. } => CliError::Usage(e.to_string()),
            e => CliError::Data(e),
        }
    }
}

fn init_threads(default_one: bool) {
    let threads = std::env::var("LUTI_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(default_one.then_some(1));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads(matches!(cli.command, Command::Bench(_)));
    let result = match cli.command {
        Command::Bake(a) => commands::bake(a),
        Command::Embed(a) => commands::embed(a),
        Command::Register(a) => commands::register(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::DumpSlice(a) => commands::dump_slice(a),
        Command::MemEstimate(a) => commands::mem_estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
