use std::path::PathBuf;

use amswarm_core::basis::BasisKind;
use amswarm_core::SolverConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const CACHE_DIR_ENV: &str = "AMSWARM_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "amswarm",
    version,
    about = "Multi-agent trajectory optimization by alternating minimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write its report.
    Solve(SolveArgs),
    /// Build and persist the factorizations for one problem shape.
    Cache(CacheArgs),
    /// Run a benchmark suite over sizes and seeds.
    Bench(BenchArgs),
    /// Write a generated scenario to a JSON file.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Square,
    Random,
    RandomObstacles,
    Hallway,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Square side length (square).
    #[arg(long, default_value_t = 8.0)]
    pub side: f64,
    /// Agent radius.
    #[arg(long, default_value_t = 0.4)]
    pub radius: f64,
    /// Flight altitude (square).
    #[arg(long, default_value_t = 1.0)]
    pub altitude: f64,
    /// Random jitter amplitude of start and goal positions (square).
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    /// Sampling box `x,y,z` (random suites).
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, 8.0, 3.0])]
    pub bounds: Vec<f64>,
    /// Obstacle count (random-obstacles).
    #[arg(long, default_value_t = 4)]
    pub obstacles: usize,
    /// Obstacle radius (random-obstacles).
    #[arg(long, default_value_t = 0.4)]
    pub obstacle_radius: f64,
    /// Corridor length (hallway).
    #[arg(long, default_value_t = 10.0)]
    pub length: f64,
    /// Corridor half-width (hallway).
    #[arg(long, default_value_t = 2.0)]
    pub width: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BasisArgs {
    /// Number of time samples.
    #[arg(long)]
    pub m: Option<usize>,
    /// Polynomial degree.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Trajectory duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_parser = parse_kind)]
    pub basis: Option<BasisKind>,
}

fn parse_kind(s: &str) -> Result<BasisKind, String> {
    s.parse()
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 150)]
    pub max_iters: usize,
    /// Max-abs residual at which the solve stops.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho0: f64,
    #[arg(long, default_value_t = 2.0)]
    pub rho_growth: f64,
    #[arg(long, default_value_t = 10)]
    pub rho_stages: usize,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            tolerance: self.tol,
            rho_initial: self.rho0,
            rho_growth: self.rho_growth,
            rho_stages: self.rho_stages,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scenario", "generator"]))]
pub struct SolveArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub generator: Option<Generator>,
    #[command(flatten)]
    pub gen: GeneratorArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Seed for randomized generators.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for persisted factorizations.
    #[arg(long, env = CACHE_DIR_ENV)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Also write one `t,x,y,z` CSV per agent.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub n_obs: usize,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, env = CACHE_DIR_ENV)]
    pub cache_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Generator,
    /// Agent counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub sizes: Vec<usize>,
    /// Obstacle counts, comma separated (random-obstacles).
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [4])]
    pub n_obs: Vec<usize>,
    /// Number of seeds per size.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub gen: GeneratorArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Concurrent solves.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, env = CACHE_DIR_ENV)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value = "bench")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub generator: Generator,
    #[command(flatten)]
    pub gen: GeneratorArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
