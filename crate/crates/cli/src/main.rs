//! `fpgap`: batch driver for training, verification, the floating-point gap
//! attack, error characterization and the quantization demo.
//!
//! Exit codes: 0 success or robust, 10 not robust (for `attack`: at least one
//! successful attack), 11 timeout, 2 usage or input error, 1 internal error.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpgap_core::attack::{DEFAULT_ITERATIONS, DEFAULT_U};
use fpgap_core::BackendId;

pub const EXIT_NOT_ROBUST: u8 = 10;
pub const EXIT_TIMEOUT: u8 = 11;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "fpgap", version, about = "Floating-point gap experiments on small verified networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the toy dataset.
    GenData(GenDataArgs),
    /// Train a network from a TOML run description.
    Train(TrainArgs),
    /// Verify robustness of one dataset image.
    Verify(VerifyArgs),
    /// Pick verified-robust, bracketable seed images.
    SelectSeeds(SelectSeedsArgs),
    /// Run the three-step attack on seed images.
    Attack(AttackArgs),
    /// Local perturbation sweep and cross-backend first-layer histogram.
    Errchar(ErrcharArgs),
    /// Quantize a model and check bit-identical logits across backends.
    QuantizeDemo(QuantizeArgs),
    /// Print the MILP of a worst-case query.
    DumpMilp(DumpMilpArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Per-solve time limit in seconds.
    #[arg(long, default_value_t = 360.0)]
    pub time_limit: f64,
    /// Verify in exact rational arithmetic.
    #[arg(long)]
    pub exact: bool,
    /// Single-threaded branch and bound with a fixed node order.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run description with `[dataset]`, optional `[arch]` and `[train]` tables.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Worst,
    Closest,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset image to verify.
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub eps: f64,
    /// Threshold of the worst-case query.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    /// Target class; defaults to the dataset label.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Worst)]
    pub objective: ObjectiveArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelectSeedsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Where to write the seed file (TOML).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Seed file written by `select-seeds`; supplies indices and eps.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Seed image indices (overrides the seed file's list).
    #[arg(long, value_delimiter = ',')]
    pub index: Vec<usize>,
    /// Overrides the seed file's eps.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Backends to attack; defaults to every single-precision backend.
    #[arg(long, value_delimiter = ',', value_parser = parse_backend)]
    pub backend: Vec<BackendId>,
    /// Seed of the random perturbations; backend `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_U)]
    pub u: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: usize,
    /// Lower the target-class bias by tau0 before perturbing.
    #[arg(long)]
    pub bias_shift: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ErrcharArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Image of the local sweep; defaults to the first test image.
    #[arg(long)]
    pub index: Option<usize>,
    /// Backends to compare; defaults to REF_F64 and the single-precision backends.
    #[arg(long, value_delimiter = ',', value_parser = parse_backend)]
    pub backend: Vec<BackendId>,
    /// Reference of the histogram.
    #[arg(long, value_parser = parse_backend, default_value = "IM2COL_F32")]
    pub reference: BackendId,
    #[arg(long, default_value_t = fpgap_core::errchar::SWEEP_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Optional dataset for reporting the quantized model's test accuracy.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Activation lattice step.
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub s0: f64,
    /// Weight lattice step.
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub s1: f64,
    /// Per-layer error bound; measured on calibration inputs when absent.
    #[arg(long)]
    pub error_bound: Option<f64>,
    /// Factor applied to the measured error.
    #[arg(long, default_value_t = 4.0)]
    pub safety: f64,
    #[arg(long, default_value_t = 1000)]
    pub inputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DumpMilpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
}

fn parse_backend(s: &str) -> Result<BackendId, String> {
    s.parse().map_err(|e: fpgap_core::Error| e.to_string())
}

/// Failure of a subcommand, with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Internal(String),
}

impl From<fpgap_core::Error> for Failure {
    fn from(e: fpgap_core::Error) -> Self {
        use fpgap_core::Error as E;
        match e {
            E::Diverged(_) | E::Lp(_) => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FPGAP_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Failure::Usage(format!("FPGAP_THREADS={v:?} is not a count")))?;
    if n == 0 {
        return Err(Failure::Usage("FPGAP_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<u8, Failure> {
        configure_threads()?;
        match cli.command {
            Command::GenData(a) => commands::gen_data(&a),
            Command::Train(a) => commands::train(&a),
            Command::Verify(a) => commands::verify(&a),
            Command::SelectSeeds(a) => commands::select_seeds(&a),
            Command::Attack(a) => commands::attack(&a),
            Command::Errchar(a) => commands::errchar(&a),
            Command::QuantizeDemo(a) => commands::quantize_demo(&a),
            Command::DumpMilp(a) => commands::dump_milp(&a),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
