mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dft_core::DftError;

/// Graph domain adaptation with decorrelated features and graph
/// transformers.
#[derive(Parser)]
#[command(name = "dft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a labelled source and an unlabelled target graph.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Feature correlation against propagation depth.
    AnalyzeCorrelation(CorrelationArgs),
    /// kNN check of label agreement between two datasets.
    ProbeCovariate(ProbeArgs),
    /// Write a stochastic block model dataset.
    GenSbm(GenArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub lambda_critic: Option<f64>,
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub decorr_layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub transformer_layers: Option<usize>,
    /// dft, dft_gcn, dft_not, dft_puret, dft_mmd or dft_dropedge.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report JSON path.
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Seeds the PPMI random walks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct CorrelationArgs {
    /// Dataset directory; otherwise a connected Erdős–Rényi graph is drawn.
    #[arg(long, conflicts_with_all = ["random_nodes", "random_p"])]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub random_nodes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub random_p: f64,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Feature width `D`.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `unnormalized` (A + I) or `normalized`.
    #[arg(long, default_value = "unnormalized")]
    pub operator: String,
    #[arg(long, default_value = "correlation.csv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    /// Seeds the label shuffle of the control.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "probe.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenArgs {
    /// JSON block model: blocks, p_in, p_out, feat_means, feat_std.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "sbm")]
    pub name: String,
    /// Write features in CSR form.
    #[arg(long)]
    pub sparse: bool,
}

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<DftError> for Failure {
    fn from(e: DftError) -> Self {
        let code = match e {
            DftError::Config(_) => EXIT_CONFIG,
            DftError::NonFinite { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("DFT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("DFT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::AnalyzeCorrelation(a) => commands::analyze_correlation(&a),
        Command::ProbeCovariate(a) => commands::probe_covariate(&a),
        Command::GenSbm(a) => commands::gen_sbm(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
