use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fracbp::analysis::LambdaGrid;
use fracbp::fbp::{FbpOptions, Schedule};
use fracbp::model::{CouplingDist, FieldDist, Topology};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "FRACBP_OUT_DIR";

#[derive(Parser, Debug, Clone)]
#[command(name = "fracbp", version, about = "Fractional belief propagation experiments on Ising models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Lambda sweep of ln Z^(lambda), the correction and the derivatives.
    Sweep(SweepArgs),
    /// Locate lambda* per instance.
    LambdaStar(StarArgs),
    /// Spread of lambda* across an ensemble, per size.
    Concentration(StarArgs),
    /// Running Monte Carlo estimates of the correction.
    McConvergence(McArgs),
    /// Sweeps and crossing verdicts on mixed-sign models.
    Mixed(SweepArgs),
    /// Build or load a spanning-tree certificate and validate it.
    ValidateTrees(TreeArgs),
    /// Write sampled instances as model files.
    Generate(GenerateArgs),
    /// Exact ln Z of a model file.
    Exact(ExactArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sweep(_) => "sweep",
            Command::LambdaStar(_) => "lambda-star",
            Command::Concentration(_) => "concentration",
            Command::McConvergence(_) => "mc-convergence",
            Command::Mixed(_) => "mixed",
            Command::ValidateTrees(_) => "validate-trees",
            Command::Generate(_) => "generate",
            Command::Exact(_) => "exact",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Grid,
    Complete,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    Attractive,
    Mixed,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Zero,
    Symmetric,
    Positive,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Sequential,
    Parallel,
}

/// How the reference ln Z for a lambda* search is obtained.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Exact when enumeration or elimination is feasible, otherwise `mc`.
    Auto,
    /// Enumeration up to the cap, variable elimination above it.
    Exact,
    /// ln Z^(lambda_ref) plus a sampled correction at lambda_ref.
    Mc,
}

/// Instance selection. Unset values take per-command defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct EnsembleArgs {
    #[arg(long, value_enum)]
    pub topology: Option<TopologyKind>,
    /// Grid side or complete-graph order; comma separated for several.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Instances per size.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, value_enum)]
    pub couplings: Option<CouplingKind>,
    #[arg(long, value_enum)]
    pub fields: Option<FieldKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Read a single instance from a model file instead of sampling.
    #[arg(long, conflicts_with_all = ["topology", "sizes", "instances", "couplings", "fields"])]
    pub model: Option<PathBuf>,
}

/// Fully resolved ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub topology: TopologyKind,
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub couplings: CouplingDist,
    pub fields: FieldDist,
    pub seed: u64,
    pub model: Option<PathBuf>,
}

impl Ensemble {
    pub fn topology_for(&self, size: usize) -> Topology {
        match self.topology {
            TopologyKind::Grid => Topology::Grid(size),
            TopologyKind::Complete => Topology::Complete(size),
        }
    }
}

impl EnsembleArgs {
    pub fn resolve(&self, defaults: &Ensemble) -> Ensemble {
        Ensemble {
            topology: self.topology.unwrap_or(defaults.topology),
            sizes: self.sizes.clone().unwrap_or_else(|| defaults.sizes.clone()),
            instances: self.instances.unwrap_or(defaults.instances),
            couplings: match self.couplings {
                Some(CouplingKind::Attractive) => CouplingDist::Attractive,
                Some(CouplingKind::Mixed) => CouplingDist::Mixed,
                None => defaults.couplings,
            },
            fields: match self.fields {
                Some(FieldKind::Zero) => FieldDist::Zero,
                Some(FieldKind::Symmetric) => FieldDist::Symmetric,
                Some(FieldKind::Positive) => FieldDist::Positive,
                None => defaults.fields,
            },
            seed: self.seed,
            model: self.model.clone(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.0)]
    pub lambda_start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_stop: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda_step: f64,
}

impl Default for GridArgs {
    fn default() -> Self {
        Self { lambda_start: 0.0, lambda_stop: 1.0, lambda_step: 0.05 }
    }
}

impl GridArgs {
    pub fn grid(&self) -> fracbp::Result<LambdaGrid> {
        LambdaGrid::new(self.lambda_start, self.lambda_stop, self.lambda_step)
    }
}

#[derive(Args, Debug, Clone)]
pub struct FbpArgs {
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Sequential)]
    pub schedule: ScheduleKind,
}

impl Default for FbpArgs {
    fn default() -> Self {
        Self { max_iters: 10_000, tol: 1e-10, damping: 0.5, schedule: ScheduleKind::Sequential }
    }
}

impl FbpArgs {
    pub fn options(&self) -> FbpOptions {
        FbpOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            damping: self.damping,
            schedule: match self.schedule {
                ScheduleKind::Sequential => Schedule::Sequential,
                ScheduleKind::Parallel => Schedule::Parallel,
            },
            ..FbpOptions::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Directory for CSV output.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    /// Monte Carlo samples for the correction.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = fracbp::correction::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
}

impl Default for SamplingArgs {
    fn default() -> Self {
        Self { samples: 100_000, batch_size: fracbp::correction::DEFAULT_BATCH_SIZE }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub fbp: FbpArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone)]
pub struct StarArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub fbp: FbpArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_enum, default_value_t = Route::Auto)]
    pub route: Route,
    /// Reference lambda of the sampled route.
    #[arg(long, default_value_t = 0.5)]
    pub lambda_ref: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol_lambda: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol_log_z: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub fbp: FbpArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 0.7, 0.9])]
    pub lambdas: Vec<f64>,
    /// A run counts as converged from the first sample count after which the
    /// running estimate stays within this distance of the reference value.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone)]
pub struct TreeArgs {
    /// Complete graph order.
    #[arg(long, group = "graph")]
    pub complete: Option<usize>,
    /// Grid side.
    #[arg(long, group = "graph")]
    pub grid: Option<usize>,
    /// Graph taken from a model file.
    #[arg(long, group = "graph")]
    pub model: Option<PathBuf>,
    /// Validate this certificate instead of building one.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Write the certificate that was built or loaded.
    #[arg(long)]
    pub write: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ExactArgs {
    #[arg(long)]
    pub model: PathBuf,
}
