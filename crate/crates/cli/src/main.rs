mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsjf_core::sampler::DEFAULT_EBOUND;
use gsjf_core::{Error, Norm, Strategy};

#[derive(Parser, Debug)]
#[command(
    name = "gsjf",
    version,
    about = "GS-Jacobi sampling for autoregressive affine flows"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for weights, noise and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Mean-square sweep residual at which a module stops.
    #[arg(long, global = true, default_value_t = DEFAULT_EBOUND)]
    pub ebound: f64,
    /// Matrix norm used by the metrics.
    #[arg(long, global = true, default_value = "spectral", value_parser = parse_norm)]
    pub norm: Norm,
    /// Print results as JSON.
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Print results as CSV.
    #[arg(long, global = true)]
    pub csv: bool,
}

impl Global {
    pub fn format(&self) -> Format {
        if self.json {
            Format::Json
        } else if self.csv {
            Format::Csv
        } else {
            Format::Text
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic model file.
    GenModel(GenModelArgs),
    /// IGM/CRM pass over a synthetic batch; writes a metric report.
    Metrics(MetricsArgs),
    /// Sample from noise with a strategy.
    Sample(SampleArgs),
    /// Time strategies against the serial inverse.
    Bench(BenchArgs),
    /// Run invariant checks on a model.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub mlp_hidden: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Project-out weight scale for every block (default 0.02/sqrt(depth)).
    #[arg(long, conflicts_with = "block_scales")]
    pub scale: Option<f64>,
    /// Comma-separated per-block scales.
    #[arg(long, value_delimiter = ',')]
    pub block_scales: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = gsjf_core::metrics::DEFAULT_METRIC_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub seq: usize,
    #[arg(long, default_value_t = gsjf_core::metrics::DEFAULT_DOMINANCE_RATIO)]
    pub ratio: f64,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InitArgs {
    /// `auto` (pick by IGM), `Z`, `Z0`, or a comma-separated list per block.
    #[arg(long, default_value = "auto")]
    pub init: String,
    /// Batch for the IGM pass behind `--init auto`.
    #[arg(long, default_value_t = 16)]
    pub metric_batch: usize,
    /// Clamp `s` to `[-c, c]` inside the samplers.
    #[arg(long)]
    pub clamp: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_strategy_arg)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub seq: usize,
    #[command(flatten)]
    pub init: InitArgs,
    /// Directory for per-block convergence traces.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Where to write the sampled tensor as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also compute distances to the exact per-block inverse.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Strategies to compare; the serial baseline is always row 0.
    #[arg(long = "strategy", required = true, num_args = 1.., value_parser = parse_strategy_arg)]
    pub strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub seq: usize,
    #[command(flatten)]
    pub init: InitArgs,
    /// Where to write the CSV table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Skip the per-block exact inverses behind the distance columns.
    #[arg(long)]
    pub no_verify: bool,
    /// Run strategies concurrently (timings are then not isolated).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Flow,
    Samplers,
    Metrics,
    Analysis,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    #[arg(long, default_value_t = 32)]
    pub seq: usize,
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy_arg(s: &str) -> Result<Strategy, String> {
    gsjf_core::parse_strategy(s).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// A core error tied to a file.
    File(PathBuf, Error),
    VerifyFailed(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn at(path: &std::path::Path) -> impl FnOnce(Error) -> CliError + '_ {
        move |e| CliError::File(path.to_path_buf(), e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::VerifyFailed(_) => 3,
            CliError::Core(e) | CliError::File(_, e) => match e {
                Error::InvalidArgument(_) | Error::Strategy { .. } => 1,
                Error::Io(_)
                | Error::Json(_)
                | Error::MalformedModel(_)
                | Error::VersionMismatch { .. }
                | Error::ModelDimension(_)
                | Error::Dimension(_) => 2,
                Error::Causality { .. } => 3,
                Error::Overflow { .. } => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::File(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::VerifyFailed(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    if cli.global.ebound.is_nan() || cli.global.ebound < 0.0 {
        return Err(CliError::Usage(format!(
            "--ebound {} must be >= 0",
            cli.global.ebound
        )));
    }
    match &cli.command {
        Command::GenModel(a) => commands::gen_model(&cli.global, a),
        Command::Metrics(a) => commands::metrics(&cli.global, a),
        Command::Sample(a) => commands::sample(&cli.global, a),
        Command::Bench(a) => commands::bench(&cli.global, a),
        Command::Verify(a) => verify::run(&cli.global, a),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsjf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
