use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clr_impute::pipeline::ModelKind;
use clr_impute::sgd::{DEFAULT_MAX_EPOCHS, DEFAULT_TOL};

#[derive(Debug, Parser)]
#[command(
    name = "clr",
    version,
    about = "Impute missing entries of sparse station × parameter × time tensors"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tensor with planted structure.
    Synth(SynthArgs),
    /// Assign observed entries to train, validation and test sets.
    Split(SplitArgs),
    /// Train a model with fixed learning rate and regularization.
    Train(TrainArgs),
    /// Train a CLR model while a particle swarm adapts the learning rate and regularization.
    Tune(TuneArgs),
    /// Score a checkpoint, or run the repeated train/test protocol.
    Evaluate(EvaluateArgs),
    /// Write predictions for requested cells.
    Impute(ImputeArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `key = value` file of default options; command-line flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Observed entries as `i,j,k,value` records.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Tensor extents `I,J,K`; inferred from the largest index when absent.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<(usize, usize, usize)>,
}

#[derive(Debug, Args)]
pub struct SplitSource {
    /// Split file written by `clr split`; otherwise the data is split in memory.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    /// Train, validation and test ratios for the in-memory split.
    #[arg(long, value_parser = parse_ratios, default_value = "0.1,0.2,0.7")]
    pub ratios: (f64, f64, f64),
    /// Seed of the in-memory split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemporalArg {
    Iid,
    Ar,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output COO file of observed entries.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Output COO file of every noiseless cell.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims, default_value = "10,8,100")]
    pub dims: (usize, usize, usize),
    /// Planted rank.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, value_enum, default_value_t = TemporalArg::Ar)]
    pub temporal: TemporalArg,
    /// AR(1) coefficient of the temporal factors.
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// Standard deviation of the additive observation noise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Fraction of cells observed.
    #[arg(long, default_value_t = 0.2)]
    pub observed: f64,
    #[arg(long, default_value_t = 1.0)]
    pub factor_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub bias_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub slot_bias_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Train, validation and test ratios.
    #[arg(num_args = 3, value_names = ["TRAIN", "VAL", "TEST"], default_values_t = [0.1, 0.2, 0.7])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output split file (`i,j,k,label`).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "clr")]
    pub model: ModelKind,
    #[arg(long, default_value_t = clr_impute::model::DEFAULT_RANK)]
    pub rank: usize,
    /// Causal convolution length (CLR only).
    #[arg(long, default_value_t = clr_impute::model::DEFAULT_KERNEL)]
    pub kernel: usize,
    /// Seed of the parameter initialization.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Learning rate.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub eta: f64,
    /// Regularization coefficient.
    #[arg(long, default_value_t = 0.001, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    /// Stop once the objective changes by less than this between epochs.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub shuffle_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitSource,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Output checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Per-epoch convergence log (CSV).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SwarmArgs {
    #[arg(long, default_value_t = 10)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.729)]
    pub inertia: f64,
    #[arg(long, default_value_t = 1.494)]
    pub cognitive: f64,
    #[arg(long, default_value_t = 1.494)]
    pub social: f64,
    /// Learning-rate search interval `LOW,HIGH`.
    #[arg(long, value_parser = parse_pair, default_value = "0.0001,0.1")]
    pub eta_bounds: (f64, f64),
    /// Regularization search interval `LOW,HIGH`.
    #[arg(long, value_parser = parse_pair, default_value = "0.0001,0.1")]
    pub lambda_bounds: (f64, f64),
    /// Velocity limit as a fraction of each interval's width.
    #[arg(long, default_value_t = 0.2)]
    pub velocity_clamp: f64,
    #[arg(long, default_value_t = 0)]
    pub swarm_seed: u64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitSource,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub swarm: SwarmArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Convergence log of the particle holding the global best (CSV).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Per-round, per-particle swarm trace (CSV).
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Data sets to evaluate; repeat for several. Named by file stem.
    #[arg(long, value_name = "FILE", required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<(usize, usize, usize)>,
    #[command(flatten)]
    pub split: SplitSource,
    /// Score this checkpoint on the test entries instead of retraining.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Number of seeded train/test runs per data set and model.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Models to compare.
    #[arg(long, value_delimiter = ',', default_value = "clr,baseline")]
    pub models: Vec<ModelKind>,
    #[arg(long, default_value_t = clr_impute::model::DEFAULT_RANK)]
    pub rank: usize,
    #[arg(long, default_value_t = clr_impute::model::DEFAULT_KERNEL)]
    pub kernel: usize,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Adapt the learning rate and regularization with a particle swarm.
    #[arg(long)]
    pub tuned: bool,
    #[command(flatten)]
    pub swarm: SwarmArgs,
    /// Report errors on the original data scale.
    #[arg(long)]
    pub denormalized: bool,
    /// Per-run results (CSV).
    #[arg(long, value_name = "FILE")]
    pub rows: Option<PathBuf>,
    /// Include wall-clock seconds in the per-run results.
    #[arg(long)]
    pub with_time: bool,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Cells to predict as `i,j,k` records.
    #[arg(long, value_name = "FILE", conflicts_with = "data")]
    pub indices: Option<PathBuf>,
    /// Observed entries; every unobserved cell in the selected slices is predicted.
    #[arg(long, value_name = "FILE", required_unless_present = "indices")]
    pub data: Option<PathBuf>,
    /// Station slice, e.g. `0,3,5-9`; all stations when absent.
    #[arg(long, value_parser = parse_index_list)]
    pub stations: Option<IndexList>,
    #[arg(long, value_parser = parse_index_list)]
    pub parameters: Option<IndexList>,
    #[arg(long, value_parser = parse_index_list)]
    pub slots: Option<IndexList>,
    /// Output COO file of predictions on the original data scale.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<(T, T, T), String> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let p = |x: &str| x.parse::<T>().map_err(|_| format!("invalid number {x:?}"));
    Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    parse_triple(s)
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    parse_triple(s)
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LOW,HIGH, got {s:?}"))?;
    let p = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| format!("invalid number {x:?}"))
    };
    Ok((p(a)?, p(b)?))
}

/// Sorted, deduplicated indices along one mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexList(pub Vec<usize>);

/// Parses `0,3,5-9` into `[0, 3, 5, 6, 7, 8, 9]`.
pub fn parse_index_list(s: &str) -> Result<IndexList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let p = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid index {x:?}"))
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (p(a)?, p(b)?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(p(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(IndexList(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("0,3,5-7").unwrap().0, [0, 3, 5, 6, 7]);
        assert_eq!(parse_index_list("2,2,1").unwrap().0, [1, 2]);
        assert!(parse_index_list("4-2").is_err());
        assert!(parse_index_list("a").is_err());
    }

    #[test]
    fn dims_accept_commas_or_x() {
        assert_eq!(parse_dims("10,8,100").unwrap(), (10, 8, 100));
        assert_eq!(parse_dims("10x8x100").unwrap(), (10, 8, 100));
        assert!(parse_dims("10,8").is_err());
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::try_parse_from([
            "clr",
            "train",
            "--data",
            "d.csv",
            "--checkpoint",
            "c.txt",
            "--eta",
            "0.5",
            "--eta",
            "0.2",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => assert_eq!(a.optim.eta, 0.2),
            other => panic!("{other:?}"),
        }
    }
}
