use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "vis", version, about = "Transient-stability-aware virtual inertia scheduling")]
pub struct Cli {
    /// Case file, or the name of a bundled case.
    #[arg(long, global = true, default_value = "case39")]
    pub case: String,
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dispatch solver tolerance.
    #[arg(long, global = true, default_value_t = vis_core::dispatch::DEFAULT_TOL)]
    pub tol: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one contingency under the nominal schedule.
    Simulate(FaultArgs),
    /// Critical clearing time of one fault by bisection.
    Cct(CctArgs),
    /// Seeded scenario sweep with TIS labels.
    Sweep(SweepArgs),
    /// Sweep turned into a labelled feature-window dataset.
    Dataset(SweepArgs),
    /// Train the classifier and the frequency regressor.
    Train(TrainArgs),
    /// Solve the conventional schedule.
    Dispatch(DispatchArgs),
    /// Info-gap robust schedule.
    Robust(RobustArgs),
    /// Probability of transient instability.
    Risk(RiskArgs),
    /// Small-signal eigenvalues of a schedule.
    Eigen(EigenArgs),
    /// Conventional against proposed schedule on a scripted contingency.
    CaseStudy(CaseStudyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FaultArgs {
    /// Line id; defaults to the first in-service line.
    #[arg(long)]
    pub line: Option<usize>,
    /// Fault duration, s. Zero runs without a fault.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.5)]
    pub location: f64,
    #[arg(long, default_value_t = 1.0)]
    pub load_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fault_start: f64,
    /// Machine index to trip (SGs first, then IBRs).
    #[arg(long, requires = "trip_time")]
    pub trip_machine: Option<usize>,
    #[arg(long)]
    pub trip_time: Option<f64>,
    #[arg(long, default_value_t = 7.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct CctArgs {
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// JSON file with sweep ranges; the standard ranges otherwise.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    #[arg(long)]
    pub regressor_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DispatchArgs {
    /// Total demand, pu; the case demand otherwise.
    #[arg(long)]
    pub demand: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    /// θ.
    #[arg(long)]
    pub theta: f64,
    /// C_c, $.
    #[arg(long)]
    pub cc: f64,
    /// P̂_d, pu; the case demand otherwise.
    #[arg(long)]
    pub predicted_load: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_cap: f64,
    #[arg(long, default_value_t = vis_core::igdt::DEFAULT_SIGMA_TOL)]
    pub sigma_tol: f64,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Risk configuration (lines, rates, duration model).
    #[arg(long)]
    pub config: PathBuf,
    /// Fault placement used for the per-line CCTs.
    #[arg(long, default_value_t = 0.5)]
    pub location: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fault_start: f64,
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    /// Schedule written by `dispatch` or `robust`; the nominal one otherwise.
    #[arg(long)]
    pub dispatch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub risk: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub regressor: PathBuf,
}
