//! `sstrace` command-line driver.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sstrace", version, about = "Learned sphere tracing of multiple scattering")]
pub struct Cli {
    /// Worker threads; defaults to SSTRACE_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate ground-truth unit-sphere walks into a training corpus.
    GenData(GenDataArgs),
    /// Train one or all sphere-step models on a corpus.
    Train(TrainArgs),
    /// Compare model samples with ground-truth walks on a parameter grid.
    EvalDist(EvalArgs),
    /// Build a conservative distance-field cache for a mesh and audit it.
    Sdf(SdfArgs),
    /// Render a scene with path tracing or sphere tracing.
    Render(RenderArgs),
    /// Sweep density or absorption and time both integrators.
    Bench(BenchArgs),
    /// Write an icosphere test mesh.
    Mesh(MeshArgs),
    /// Re-run the command of a manifest and compare deterministic outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 200_000)]
    pub count: usize,
    /// Extinction range `lo:hi` in 1/m.
    #[arg(long = "sigma-t", default_value = "0:200", allow_hyphen_values = true)]
    pub sigma_t: String,
    /// How extinction is spread over its range.
    #[arg(long = "sigma-t-law", value_enum, default_value = "uniform")]
    pub sigma_t_law: SigmaLawChoice,
    /// Anisotropy range `lo:hi`.
    #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
    pub g: String,
    /// Albedo law: `log:EXP_MIN:EXP_MAX` (phi = 1 - 10^u), `uniform:MIN:MAX`
    /// or `const:PHI`.
    #[arg(long, default_value = "log:-5:-0.5", allow_hyphen_values = true)]
    pub albedo: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the samples as CSV.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaLawChoice {
    Uniform,
    /// Uniform in ln(1 + sigma_t).
    Log1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Lengthgen,
    Pathgen,
    Eventgen,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub model: ModelChoice,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Hidden layers; defaults to the production architecture.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    /// Start from the 20-epoch desk schedule instead of the full one.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of steps over which the KL weight ramps up from 0.
    #[arg(long = "kl-warmup")]
    pub kl_warmup: Option<f64>,
    #[arg(long = "weight-decay", default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long = "validation-fraction", default_value_t = 0.05)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the weights as JSON.
    #[arg(long = "export-json")]
    pub export_json: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory with the three model bundles.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long = "sigma-t", value_delimiter = ',', default_value = "1,4,20,100")]
    pub sigma_t: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "-0.7,0,0.4,0.9", allow_hyphen_values = true)]
    pub g: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SdfArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Interior points checked against the exact surface distance.
    #[arg(long = "audit-samples", default_value_t = 10_000)]
    pub audit_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntegratorChoice {
    Pt,
    St,
}

#[derive(Debug, Clone, Args)]
pub struct SceneOverrides {
    /// Samples per pixel; defaults to the scene file.
    #[arg(long)]
    pub spp: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enable next-event estimation regardless of the scene file.
    #[arg(long)]
    pub nee: bool,
    /// Disable next-event estimation regardless of the scene file.
    #[arg(long = "no-nee", conflicts_with = "nee")]
    pub no_nee: bool,
    /// Smallest sphere radius in meters.
    #[arg(long = "r-min")]
    pub r_min: Option<f64>,
    /// Model directory; defaults to the scene file.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value = "pt")]
    pub integrator: IntegratorChoice,
    #[command(flatten)]
    pub overrides: SceneOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Extinction multipliers of the density sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub multipliers: Vec<f64>,
    /// Steps of an absorption sweep that doubles `1 - albedo` per step,
    /// starting from `--absorption-start`; 0 disables it.
    #[arg(long = "absorption-steps", default_value_t = 0)]
    pub absorption_steps: usize,
    #[arg(long = "absorption-start", value_delimiter = ',', default_value = "2e-3,2e-4,2e-3")]
    pub absorption_start: Vec<f64>,
    #[command(flatten)]
    pub overrides: SceneOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MeshArgs {
    #[arg(long, default_value_t = 3)]
    pub subdivisions: u32,
    /// Sphere radius in meters.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the replayed outputs; must differ from the original.
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::EvalDist(_) => "eval-dist",
            Command::Sdf(_) => "sdf",
            Command::Render(_) => "render",
            Command::Bench(_) => "bench",
            Command::Mesh(_) => "mesh",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Command::GenData(a) => &mut a.out,
            Command::Train(a) => &mut a.out,
            Command::EvalDist(a) => &mut a.out,
            Command::Sdf(a) => &mut a.out,
            Command::Render(a) => &mut a.out,
            Command::Bench(a) => &mut a.out,
            Command::Mesh(a) => &mut a.out,
            Command::Replay(a) => &mut a.out,
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return if n > 0 { Ok(Some(n)) } else { Err(CliError::Usage("--threads must be positive".into())) };
    }
    match std::env::var("SSTRACE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("SSTRACE_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Err(CliError::Usage("invalid arguments".into())) } else { Ok(()) };
        }
    };
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    commands::dispatch(cli.command, &argv[1..])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sstrace: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
