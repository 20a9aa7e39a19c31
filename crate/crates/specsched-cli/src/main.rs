//! `specsched` command-line tool.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use output::{CliError, RunManifest, Timer};

#[derive(Parser, Debug)]
#[command(name = "specsched", version, about = "Spectral analysis and optimization of diffusion noise schedules")]
struct Cli {
    /// Seed for Monte Carlo sampling and random initializations.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Manifest location (defaults to `<first output>.manifest.json`).
    #[arg(long, global = true)]
    manifest_out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Generate a parametric schedule.
    Gen(GenArgs),
    /// Optimize a schedule for a spectral model.
    Optimize(OptimizeArgs),
    /// Evaluate losses of given schedules.
    Eval(EvalArgs),
    /// Compare schedule families across step counts.
    Compare(CompareArgs),
    /// Monte Carlo samples of the time-domain reverse process.
    Simulate(SimulateArgs),
    /// Per-step relative variance error and W2 of the DDIM state.
    Dynamics(DynamicsArgs),
    /// Mean bias of the generated distribution.
    Bias(BiasArgs),
    /// Estimate a spectral model from a signal or build the synthetic one.
    Estimate(EstimateArgs),
    /// Convert between variance-preserving and variance-exploding schedules.
    Convert(ConvertArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct Endpoints {
    #[arg(long, default_value_t = specsched::DEFAULT_EPS0)]
    pub eps0: f64,
    #[arg(long = "epsS", alias = "eps-s", default_value_t = specsched::DEFAULT_EPS_S)]
    pub eps_s: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// linear, cosine, sigmoid or edm.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub steps: usize,
    /// Comma-separated family parameters: cosine/sigmoid `s,e,tau`, edm
    /// `rho,sigma_min,sigma_max`.
    #[arg(long, allow_hyphen_values = true)]
    pub params: Option<String>,
    #[command(flatten)]
    pub ends: Endpoints,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// w2, kl or wl1.
    #[arg(long, default_value = "w2")]
    pub loss: String,
    /// ddim or ddpm.
    #[arg(long, default_value = "ddim")]
    pub process: String,
    #[arg(long)]
    pub steps: usize,
    /// constrained or free.
    #[arg(long, default_value = "constrained")]
    pub mode: String,
    /// linear, cosine, random[:SEED] or warm:PATH.
    #[arg(long, default_value = "linear")]
    pub init: String,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub ftol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub gtol: f64,
    /// analytic or fd.
    #[arg(long, default_value = "analytic")]
    pub gradient: String,
    /// Optimize for this eigenvalue alone.
    #[arg(long)]
    pub single_eigenvalue: Option<usize>,
    #[command(flatten)]
    pub ends: Endpoints,
    #[arg(long)]
    pub out: PathBuf,
    /// Report location (defaults to `<out stem>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Schedule files; may be repeated.
    #[arg(long = "schedule", required = true)]
    pub schedules: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "w2,kl,wl1")]
    pub losses: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "ddim")]
    pub processes: Vec<String>,
    /// Report the W2 distance instead of its square.
    #[arg(long)]
    pub root: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Schedule specs: linear, cosine:s,e,tau, sigmoid:s,e,tau,
    /// edm:rho,smin,smax, optimized or file:PATH. Defaults to the six
    /// baselines plus optimized.
    #[arg(long = "schedule", allow_hyphen_values = true)]
    pub schedules: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "10,28,60,112")]
    pub steps_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "w2")]
    pub losses: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "ddim")]
    pub processes: Vec<String>,
    #[arg(long)]
    pub root: bool,
    #[command(flatten)]
    pub ends: Endpoints,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TargetSource {
    /// Dense target JSON `{"mean": [...], "covariance": [[...], ...]}`.
    #[arg(long, conflicts_with = "synthetic")]
    pub target: Option<PathBuf>,
    /// Synthetic circulant target `d,l,mu`.
    #[arg(long)]
    pub synthetic: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: TargetSource,
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, default_value = "ddim")]
    pub process: String,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    /// csv, or raw (little-endian f64 plus a `<out>.sidecar.json`).
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Also write the empirical mean and covariance as JSON.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct DynamicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BiasArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, default_value = "ddim")]
    pub process: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EstimateArgs {
    /// WAV (PCM16), CSV or raw f64 signal.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// wav, csv or raw; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Sidecar for raw input (defaults to `<input>.json`).
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Build the synthetic circulant model `d,l,mu` instead.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long = "th", default_value_t = 0.05)]
    pub threshold: f64,
    /// circulant or symmetric.
    #[arg(long, default_value = "circulant")]
    pub structure: String,
    /// Keep only the largest eigenvalues.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Covariance matrix as CSV.
    #[arg(long)]
    pub covariance_out: Option<PathBuf>,
    /// Dense target JSON for `simulate --target`.
    #[arg(long)]
    pub target_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvertArgs {
    /// ve (input is a VP schedule) or vp (input is a VE sigma schedule).
    #[arg(long)]
    pub to: String,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Optimize(_) => "optimize",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Simulate(_) => "simulate",
            Command::Dynamics(_) => "dynamics",
            Command::Bias(_) => "bias",
            Command::Estimate(_) => "estimate",
            Command::Convert(_) => "convert",
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(output::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let timer = Timer::start();
    let mut out = output::Outputs::default();
    let summary = match &cli.command {
        Command::Gen(a) => commands::gen(a, &mut out),
        Command::Optimize(a) => commands::optimize(a, cli.seed, &mut out),
        Command::Eval(a) => commands::eval(a, &mut out),
        Command::Compare(a) => commands::compare(a, &mut out),
        Command::Simulate(a) => commands::simulate(a, cli.seed, &mut out),
        Command::Dynamics(a) => commands::dynamics(a, &mut out),
        Command::Bias(a) => commands::bias(a, &mut out),
        Command::Estimate(a) => commands::estimate(a, &mut out),
        Command::Convert(a) => commands::convert(a, &mut out),
    }?;
    out.commit()?;
    let outputs = out.paths();
    if let Some(path) = output::manifest_path(cli.manifest_out.as_deref(), &outputs) {
        let manifest = RunManifest {
            command: cli.command.name(),
            argv,
            config: serde_json::to_value(&cli.command).expect("arguments serialize"),
            inputs: out.inputs.clone(),
            outputs,
            seed: cli.seed,
            threads: cli.threads,
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_time_seconds: timer.seconds(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        output::write_atomic(&path, text.as_bytes())?;
    }
    println!("{summary}");
    Ok(())
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = run(cli, argv) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
