use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurolens_core::{Method, DEFAULT_BINS, DEFAULT_TAU, DEFAULT_TOP_K};

#[derive(Debug, Parser)]
#[command(name = "neurolens", version, about = "Concept separability and erasure over recorded activations")]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "NEUROLENS_THREADS")]
    pub threads: Option<usize>,

    /// Leave the timestamp out of run manifests so repeated runs are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic activation dataset from a JSON config.
    Synth(SynthArgs),
    /// Validate an activation file and summarize it.
    IngestCheck(IngestCheckArgs),
    /// Fit per-(neuron, concept) densities and write a density cache.
    FitDensities(FitArgs),
    /// Score per-neuron and layer separability.
    Separability(SeparabilityArgs),
    /// Neuron-set overlap between concepts.
    Overlap(OverlapArgs),
    /// Build an erasure plan for one concept.
    BuildPlan(BuildPlanArgs),
    /// Apply an erasure plan to every sample of a dataset.
    Intervene(InterveneArgs),
    /// Score an erasure plan with a readout classifier.
    Evaluate(EvaluateArgs),
    /// Correlate separability scores with erasure precision per method.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestCheckArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the summary here (it is always printed).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeparabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Density cache from `fit-densities`; fitted on the fly when omitted.
    #[arg(long)]
    pub densities: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapModeArg {
    /// Top-K neurons by mean activation per concept.
    Topk,
    /// Every neuron with any positive activation per concept.
    Active,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = OverlapModeArg::Topk)]
    pub mode: OverlapModeArg,
    /// Neurons per concept in `topk` mode.
    #[arg(long = "k", default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Concept index to erase.
    #[arg(long)]
    pub target: Option<usize>,
    /// Fraction of neurons kept by saliency (Range, Adaptive, Full).
    #[arg(long)]
    pub p: Option<f64>,
    /// Minimum firing frequency for SAE latents.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct BuildPlanArgs {
    /// Dataset the plan is fitted on.
    #[arg(long)]
    pub data: PathBuf,
    /// Density cache of the same dataset; APP plans fit one when omitted.
    #[arg(long)]
    pub densities: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    /// Dataset to transform.
    #[arg(long)]
    pub data: PathBuf,
    /// Plan from `build-plan`; otherwise give --method and --target.
    #[arg(long = "plan", conflicts_with_all = ["method", "target", "p"])]
    pub plan_file: Option<PathBuf>,
    /// Dataset the plan (and its densities) were fitted on; defaults to --data.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub densities: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset the readout and plan are fitted on.
    #[arg(long)]
    pub fit: PathBuf,
    /// Held-out dataset the plan is scored on.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long = "plan")]
    pub plan_file: PathBuf,
    #[arg(long)]
    pub densities: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Perplexity without the intervention, from an external model run.
    #[arg(long, requires = "ppl_post")]
    pub ppl_base: Option<f64>,
    /// Perplexity with the intervention.
    #[arg(long, requires = "ppl_base")]
    pub ppl_post: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-concept before/after table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Append a `score,delta_acc,method,run_id` row to this CSV.
    #[arg(long)]
    pub append_correlation: Option<PathBuf>,
    /// Separability score for the appended row; computed from the fit data when omitted.
    #[arg(long)]
    pub score: Option<f64>,
    #[arg(long, default_value = "run")]
    pub run_id: String,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// CSV with `score,delta_acc,method,run_id` rows.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: neurolens_core::Error| e.to_string())
}
