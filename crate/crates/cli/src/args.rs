//! Command-line arguments. Every subcommand that produces outputs is also
//! serializable, so it can be recorded in a run manifest or read from a TOML
//! config file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "crossboot", version, about = "Product-weight bootstrap for crossed random effects data")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Shards for the accumulation pass (defaults to the thread count).
    #[arg(long, global = true)]
    pub shards: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Duplication and match statistics with gain coefficients.
    Diagnose(DiagnoseArgs),
    /// Replicate means, variance estimates and intervals per group.
    Bootstrap(BootstrapArgs),
    /// Replicate-wise difference between two groups.
    Contrast(ContrastArgs),
    /// Draw a synthetic dataset with known variance components.
    Simulate(SimulateArgs),
    /// Run the reference-computation suites.
    Verify(VerifyArgs),
    /// Collapse nested factors into one row per outer cell.
    Collapse(CollapseArgs),
    /// Run the command described by a TOML file.
    #[serde(skip)]
    Run(RunArgs),
    /// Re-run the command recorded in a manifest and compare output digests.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Diagnose(_) => "diagnose",
            Command::Bootstrap(_) => "bootstrap",
            Command::Contrast(_) => "contrast",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
            Command::Collapse(_) => "collapse",
            Command::Run(_) => "run",
            Command::Replay(_) => "replay",
        }
    }

    /// Directory receiving the outputs and the manifest.
    pub fn out_dir(&self) -> Option<PathBuf> {
        match self {
            Command::Diagnose(a) => Some(a.out.clone()),
            Command::Bootstrap(a) => Some(a.out.clone()),
            Command::Contrast(a) => Some(a.out.clone()),
            Command::Verify(a) => a.out.clone(),
            Command::Simulate(a) => Some(parent_dir(&a.out)),
            Command::Collapse(a) => Some(parent_dir(&a.out)),
            Command::Run(_) | Command::Replay(_) => None,
        }
    }

    /// The same command writing into `dir` instead.
    pub fn redirected(&self, dir: &Path) -> Command {
        let mut c = self.clone();
        match &mut c {
            Command::Diagnose(a) => a.out = dir.to_path_buf(),
            Command::Bootstrap(a) => a.out = dir.to_path_buf(),
            Command::Contrast(a) => a.out = dir.to_path_buf(),
            Command::Verify(a) => a.out = Some(dir.to_path_buf()),
            Command::Simulate(a) => a.out = dir.join(a.out.file_name().unwrap_or_default()),
            Command::Collapse(a) => a.out = dir.join(a.out.file_name().unwrap_or_default()),
            Command::Run(_) | Command::Replay(_) => {}
        }
        c
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn default_value_column() -> String {
    "value".into()
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// CSV file with a header row (`.jsonl` files hold one object per line).
    #[arg(long)]
    pub input: PathBuf,

    /// Factor columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub factors: Vec<String>,

    /// Response column.
    #[arg(long, default_value = "value")]
    #[serde(default = "default_value_column")]
    pub value: String,

    /// Grouping columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub groups: Vec<String>,

    /// Multiplicity column, as written by `collapse`.
    #[arg(long)]
    #[serde(default)]
    pub count: Option<String>,

    /// Accept repeated full indices by adding a replicate factor.
    #[arg(long)]
    #[serde(default)]
    pub replicate_mode: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One weight per level of each active factor, multiplied.
    Product,
    /// One weight per observation.
    Naive,
}

fn default_family() -> String {
    "don".into()
}

fn default_replicates() -> usize {
    crossboot::engine::DEFAULT_REPLICATES
}

fn default_level() -> f64 {
    0.95
}

fn default_scheme() -> Scheme {
    Scheme::Product
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct WeightArgs {
    /// Weight family: don, poisson, exp or bernoulli:<tau_sq>.
    #[arg(long, default_value = "don")]
    #[serde(default = "default_family")]
    pub family: String,

    #[arg(long, default_value_t = crossboot::engine::DEFAULT_REPLICATES)]
    #[serde(default = "default_replicates")]
    pub replicates: usize,

    /// Master seed; every weight is a function of it.
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,

    /// Reweighted factors, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub active_factors: Option<Vec<String>>,

    #[arg(long, value_enum, default_value = "product")]
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,

    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_out() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    /// Weight variance used for the gain coefficients.
    #[arg(long, default_value_t = 1.0)]
    #[serde(default = "one")]
    pub tau_sq: f64,

    /// Output directory.
    #[arg(long, default_value = ".")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub weights: WeightArgs,

    /// Output directory.
    #[arg(long, default_value = ".")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ContrastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub weights: WeightArgs,

    /// First group label, one comma-separated value per grouping column.
    #[arg(long)]
    pub a: String,

    /// Second group label.
    #[arg(long)]
    pub b: String,

    /// Output directory.
    #[arg(long, default_value = ".")]
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternChoice {
    /// Independent Zipf coordinates, duplicates rejected.
    Zipf,
    /// Complete grid.
    Grid,
    /// Index tuples read from a CSV file.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectChoice {
    Gaussian,
    Uniform,
}

fn default_pattern() -> PatternChoice {
    PatternChoice::Zipf
}

fn default_effects() -> EffectChoice {
    EffectChoice::Gaussian
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "zipf")]
    #[serde(default = "default_pattern")]
    pub pattern: PatternChoice,

    /// Number of factors (zipf).
    #[arg(long)]
    pub r: Option<usize>,

    /// Number of observations (zipf).
    #[arg(long)]
    pub n: Option<usize>,

    /// Levels per factor (zipf; one value is repeated for every factor).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub levels: Vec<usize>,

    /// Zipf exponents per factor (one value is repeated).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub exponents: Vec<f64>,

    /// Grid sizes per factor (grid).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub sizes: Vec<usize>,

    /// CSV of integer index tuples, no header (mask).
    #[arg(long)]
    pub mask: Option<PathBuf>,

    /// Homoscedastic variance components as JSON, e.g. '{"1":1,"12":0.5}'.
    #[arg(long)]
    pub sigma: Option<String>,

    /// Heteroscedastic variance range `lower,upper`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub het: Option<Vec<f64>>,

    #[arg(long, default_value_t = 0.0)]
    #[serde(default)]
    pub mu: f64,

    #[arg(long, value_enum, default_value = "gaussian")]
    #[serde(default = "default_effects")]
    pub effects: EffectChoice,

    /// Assign rows uniformly at random to this many groups (column `group`).
    #[arg(long)]
    pub groups: Option<usize>,

    /// Seed for the values; the pattern uses `--pattern-seed`, defaulting to this.
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,

    #[arg(long)]
    pub pattern_seed: Option<u64>,

    /// Output CSV; `truth.json` and the manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Suites to run (identities, gains, naive, stability, het, nested); default all.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub suite: Vec<String>,

    /// Directory for `verify_report.json` and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CollapseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,

    /// Outer factors to keep, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub outer: Vec<String>,

    /// Output CSV with columns outer factors, groups, value (the cell total) and count.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file with a `command` key and that command's options.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A `run_manifest.json` written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Output directory for the re-run (default: `replay/` next to the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
