use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "pseudorbit",
    version,
    about = "Ulam transfer operators, pseudo-orbit least elements and noisy orbits"
)]
pub struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory that receives every output file.
    #[arg(long, global = true, env = "PSEUDORBIT_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble the (perturbed) Ulam matrix and write it as CSV.
    Ulam(UlamArgs),
    /// Leading eigenvalues, optionally with the metastability analysis.
    Spectrum(SpectrumArgs),
    /// Ergodic components of the unperturbed map and their densities.
    Components(ModelArgs),
    /// Pseudo-orbit classes and least elements at one noise level.
    LeastElements(NoisyArgs),
    /// Check that least elements carry the perturbed stationary densities.
    Verify(NoisyArgs),
    /// Run noisy orbits (1-D or the skew product) and histogram them.
    Simulate(SimulateArgs),
    /// Full pipeline on the three-component interval map.
    Example1(Example1Args),
    /// Full pipeline on the two-component base map and its skew product.
    Example2(Example2Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Uniform,
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Torus,
    Strict,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Map description (JSON).
    #[arg(long)]
    pub map: PathBuf,

    /// Number of Ulam cells.
    #[arg(long, default_value_t = 4000)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = Shape::Uniform)]
    pub kernel: Shape,

    /// Noise near the domain boundary (default: torus for circle maps,
    /// strict otherwise).
    #[arg(long, value_enum)]
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Args)]
pub struct NoisyArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub eps: f64,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Report file name inside the output directory.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UlamArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Noise amplitude; omit for the unperturbed matrix.
    #[arg(long)]
    pub eps: Option<f64>,

    #[command(flatten)]
    pub kernel: KernelArgs,

    #[arg(long, default_value = "matrix.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub eps: Option<f64>,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Number of eigenvalues to compute.
    #[arg(long, default_value_t = 8)]
    pub k: usize,

    /// Also extract ξ_ε and the almost-invariant split (needs --eps).
    #[arg(long)]
    pub metastability: bool,

    /// Domain point separating the two expected almost-invariant sets.
    #[arg(long)]
    pub split_at: Option<f64>,

    #[arg(long, default_value_t = 0.8)]
    pub gap_radius: f64,

    #[arg(long, default_value_t = 0.1)]
    pub isolation_delta: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Map description (JSON); optional with --skew, where the built-in
    /// base map for --a is used.
    #[arg(long)]
    pub map: Option<PathBuf>,

    /// Simulate the skew product `(T(x) + ωy, 2y mod 1)`.
    #[arg(long)]
    pub skew: bool,

    /// Margin of the skew base map.
    #[arg(long)]
    pub a: Option<f64>,

    #[arg(long)]
    pub eps: f64,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Number of independent chains, started uniformly at random.
    #[arg(long, default_value_t = 100)]
    pub starts: usize,

    /// States per chain, burn-in included.
    #[arg(long, default_value_t = 100_000)]
    pub steps: usize,

    #[arg(long, default_value_t = 10_000)]
    pub burn: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Histogram cells along x.
    #[arg(long, default_value_t = 200)]
    pub bins: usize,

    /// Histogram cells along the fiber (skew only).
    #[arg(long, default_value_t = 100)]
    pub fiber_bins: usize,

    /// Keep every k-th post-burn-in point in the orbit file.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,

    /// Cap on the number of points in the orbit file.
    #[arg(long, default_value_t = 100_000)]
    pub max_points: usize,

    #[arg(long, default_value = "orbits.csv")]
    pub out: PathBuf,

    #[arg(long, default_value = "hist.csv")]
    pub hist: PathBuf,
}

#[derive(Debug, Args)]
pub struct Example1Args {
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,

    #[arg(long, default_value_t = 4000)]
    pub bins: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Samples per simulated chain.
    #[arg(long, default_value_t = 1_000_000)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct Example2Args {
    #[arg(long, default_value_t = 0.1)]
    pub a: f64,

    #[arg(long, default_value_t = 1.0 / 120.0)]
    pub eps: f64,

    #[arg(long, default_value_t = 4000)]
    pub bins: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long, default_value_t = 100)]
    pub starts: usize,

    #[arg(long, default_value_t = 100_000)]
    pub steps: usize,

    #[arg(long, default_value_t = 10_000)]
    pub burn: usize,
}
