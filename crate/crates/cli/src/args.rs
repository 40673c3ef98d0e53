use std::path::PathBuf;

use bam::model::CatalogKind;
use bam::smc::{Resampling, Schedule};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "bam", version, about = "Bayesian allocation models for count tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for the parallel particle and enumeration maps.
    /// Results do not depend on it.
    #[arg(long, global = true, env = "BAM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Marginal likelihood of a tensor over a range of latent sizes.
    Score(ScoreArgs),
    /// Posterior-mean factor tables from an SMC run.
    Decompose(DecomposeArgs),
    /// Draw a tensor from the generative model.
    Simulate(SimulateArgs),
    /// Exhaustive enumeration: marginal likelihood, missing-entry posterior, histogram.
    Exact(ExactArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Smc,
    Vb,
    Exact,
}

fn parse_kind(s: &str) -> Result<CatalogKind, String> {
    s.parse().map_err(|e: bam::Error| e.to_string())
}

fn parse_resampling(s: &str) -> Result<Resampling, String> {
    s.parse().map_err(|e: bam::Error| e.to_string())
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    s.parse().map_err(|e: bam::Error| e.to_string())
}

/// `lo:hi` (inclusive) or a single value.
pub fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once(':').unwrap_or((s, s));
    let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?;
    let hi: u64 = hi.trim().parse().map_err(|_| format!("bad range end in `{s}`"))?;
    if lo > hi {
        return Err(format!("empty range `{s}`"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("model_source").required(true).args(["model", "model_file"])))]
pub struct ModelArgs {
    /// Catalogue model: klnmf, cp, tucker, pachinko, mmb or snmf.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<CatalogKind>,

    /// JSON model specification (overrides the catalogue).
    #[arg(long)]
    pub model_file: Option<PathBuf>,

    /// Number of latent layers of the pachinko chain.
    #[arg(long, default_value_t = 1)]
    pub levels: usize,

    /// Equivalent sample size and Gamma shape (default 1, or the model file's).
    #[arg(long)]
    pub a: Option<f64>,

    /// Gamma rate (default 1, or the model file's).
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmcArgs {
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// multinomial, stratified, systematic or residual.
    #[arg(long, default_value = "systematic", value_parser = parse_resampling)]
    pub resampling: Resampling,

    /// always, never, adaptive or adaptive:ρ.
    #[arg(long, default_value = "adaptive", value_parser = parse_schedule)]
    pub schedule: Schedule,

    /// ESS fraction ρ for the adaptive schedule.
    #[arg(long)]
    pub ess_threshold: Option<f64>,

    /// Resample at every step (same as `--schedule always`).
    #[arg(long)]
    pub unbiased: bool,
}

impl SmcArgs {
    pub fn schedule(&self) -> Schedule {
        match (self.unbiased, self.schedule, self.ess_threshold) {
            (true, _, _) => Schedule::Always,
            (false, Schedule::Adaptive(_), Some(rho)) => Schedule::Adaptive(rho),
            (false, s, _) => s,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    /// Observed tensor in the text format.
    pub tensor: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Latent sizes to score, `lo:hi`. Ignored with --model-file.
    #[arg(long, default_value = "1:4", value_parser = parse_range)]
    pub k_range: (u64, u64),

    #[arg(long, value_enum, default_value_t = Method::Smc)]
    pub method: Method,

    #[command(flatten)]
    #[serde(flatten)]
    pub smc: SmcArgs,

    /// Independent SMC runs per latent size.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,

    /// VB restarts; the largest ELBO is reported.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,

    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,

    /// Absolute ELBO change between sweeps that stops VB.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    /// Largest number of allocation tensors exact enumeration may visit.
    #[arg(long, default_value_t = bam::exact::DEFAULT_SEARCH_CAP)]
    pub cap: f64,

    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,

    /// Per-K table as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub emit_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    pub tensor: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Latent size for catalogue models.
    #[arg(long, default_value_t = 2)]
    pub k: usize,

    #[command(flatten)]
    #[serde(flatten)]
    pub smc: SmcArgs,

    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("size").required(true).args(["tokens", "lambda_draw"])))]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Full cardinalities of the catalogue model, e.g. `3,2,4` for klnmf `[I, K, J]`.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,

    /// Fixed number of tokens.
    #[arg(long)]
    pub tokens: Option<u64>,

    /// Draw λ ~ Gamma(a, b) and the token count from Poisson(λ).
    #[arg(long)]
    pub lambda_draw: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Observed (visible) tensor.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,

    /// Latent allocation tensor; defaults to `<out>.latent`.
    #[arg(long)]
    #[serde(skip)]
    pub latent_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExactArgs {
    pub tensor: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    #[arg(long, default_value_t = 2)]
    pub k: usize,

    /// Posterior over the total token count for a tensor with missing entries, `lo:hi`.
    #[arg(long, value_parser = parse_range)]
    pub missing_posterior: Option<(u64, u64)>,

    /// Histogram of log π(S) over compatible allocations with this many bins.
    #[arg(long)]
    pub histogram: Option<usize>,

    #[arg(long, default_value_t = bam::exact::DEFAULT_SEARCH_CAP)]
    pub cap: f64,

    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,

    /// Histogram (or S₊ posterior) as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub emit_csv: Option<PathBuf>,
}
