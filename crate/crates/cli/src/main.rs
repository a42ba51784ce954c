use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "mbplan", version, about = "Memory-constant channel planning and constrained subnet search")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Space definition (JSON); defaults to the built-in five-stage space.
    #[arg(long, global = true)]
    pub space: Option<PathBuf>,
    /// Output file for the command's main artifact; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer memory profile of one configuration.
    Profile(ProfileArgs),
    /// Plan a channel schedule.
    Plan(PlanArgs),
    /// Draw a peak-balanced dataset scored by the synthetic oracle.
    Sample(SampleArgs),
    /// Fit the ridge predictor on a dataset.
    TrainPredictor(TrainArgs),
    /// Evolutionary search under a peak constraint.
    Search(SearchArgs),
    /// One search per constraint; writes the curve as CSV.
    Sweep(SweepArgs),
    /// Aligned per-layer traces of two configurations.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also report bytes at float32.
    #[arg(long)]
    pub bytes: bool,
    #[arg(long)]
    pub include_classifier: bool,
    /// Per-layer CSV destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    ClosedForm,
    Numeric,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Numeric)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = mbplan_core::planner::DEFAULT_DIVISOR)]
    pub divisor: u32,
    #[arg(long, default_value_t = mbplan_core::planner::DEFAULT_STEM_WIDTH)]
    pub stem: u32,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = mbplan_core::predictor::DEFAULT_BUCKETS)]
    pub buckets: usize,
    /// Noise level of the synthetic scores.
    #[arg(long, default_value_t = mbplan_core::predictor::SYNTHETIC_SIGMA)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    /// Fraction of rows held out for the rank-correlation report.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Args, Debug)]
pub struct ScorerArgs {
    /// Trained predictor (JSON); the synthetic oracle is used when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Noise level of the synthetic oracle.
    #[arg(long, default_value_t = mbplan_core::predictor::SYNTHETIC_SIGMA)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct EvoArgs {
    #[arg(long, default_value_t = 100)]
    pub population: usize,
    #[arg(long, default_value_t = 50)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.25)]
    pub parent_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub mutation_prob: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mutation_fraction: f64,
    #[arg(long)]
    pub freeze_resolution: bool,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub max_peak: u64,
    #[arg(long)]
    pub include_classifier: bool,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [325_000u64, 350_000, 400_000, 800_000])]
    pub constraints: Vec<u64>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Space for the second configuration; defaults to --space.
    #[arg(long)]
    pub space_b: Option<PathBuf>,
    #[arg(long)]
    pub include_classifier: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
