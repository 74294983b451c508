//! End-to-end training and evaluation used by the CLI and the acceptance
//! suite: fit a model on a split, score it on the test entries, and repeat
//! the protocol over several seeded runs.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::baseline::BiasCpParams;
use crate::checkpoint::{Checkpoint, Model};
use crate::metrics::{self, MetricError, MetricReport, RunMetrics};
use crate::model::{ClrParams, ModelError};
use crate::pso::{tune_train, SwarmConfig, TuneError, TuneReport};
use crate::sgd::{train, ConfigError, SgdModel, StopReason, TrainConfig, TrainReport};
use crate::split::{split, HeldOut, Splits};
use crate::tensor::{SparseTensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Clr,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Clr => "clr",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "clr" => Ok(ModelKind::Clr),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(format!("unknown model {s:?} (expected clr or baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub rank: usize,
    pub kernel: usize,
    pub init_seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            kind: ModelKind::Clr,
            rank: crate::model::DEFAULT_RANK,
            kernel: crate::model::DEFAULT_KERNEL,
            init_seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Tune(String),
    #[error("training diverged after {epochs} epoch(s)")]
    Diverged { epochs: usize },
}

impl<M> From<TuneError<M>> for PipelineError {
    fn from(e: TuneError<M>) -> Self {
        match e {
            TuneError::Config(c) => PipelineError::Config(c),
            other => PipelineError::Tune(other.to_string()),
        }
    }
}

pub fn init_model(
    dims: crate::tensor::Dims,
    settings: &ModelSettings,
    seed: u64,
) -> Result<Model, ModelError> {
    Ok(match settings.kind {
        ModelKind::Clr => Model::Clr(ClrParams::init_positive(
            dims,
            settings.rank,
            settings.kernel,
            seed,
        )?),
        ModelKind::Baseline => {
            Model::Baseline(BiasCpParams::init_positive(dims, settings.rank, seed)?)
        }
    })
}

/// Trains with fixed hyperparameters.
pub fn fit(
    splits: &Splits,
    settings: &ModelSettings,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), PipelineError> {
    let init = init_model(splits.dims, settings, settings.init_seed)?;
    Ok(match init {
        Model::Clr(p) => {
            let (p, r) = train(p, splits, cfg)?;
            (Model::Clr(p), r)
        }
        Model::Baseline(p) => {
            let (p, r) = train(p, splits, cfg)?;
            (Model::Baseline(p), r)
        }
    })
}

/// Trains with PSO-adapted hyperparameters. Particle `p` starts from
/// `init_seed + p`.
pub fn fit_tuned(
    splits: &Splits,
    settings: &ModelSettings,
    swarm: &SwarmConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TuneReport), PipelineError> {
    let dims = splits.dims;
    let seed = |p: usize| settings.init_seed.wrapping_add(p as u64);
    // Validated here so the per-particle constructors below cannot fail.
    init_model(dims, settings, seed(0))?;
    Ok(match settings.kind {
        ModelKind::Clr => {
            let init = |p| {
                ClrParams::init_positive(dims, settings.rank, settings.kernel, seed(p))
                    .expect("sizes validated")
            };
            let (p, r) = tune_train(init, splits, swarm, cfg)?;
            (Model::Clr(p), r)
        }
        ModelKind::Baseline => {
            let init = |p| {
                BiasCpParams::init_positive(dims, settings.rank, seed(p)).expect("sizes validated")
            };
            let (p, r) = tune_train(init, splits, swarm, cfg)?;
            (Model::Baseline(p), r)
        }
    })
}

fn pairs(model: &Model, held: &[HeldOut]) -> Vec<(f64, f64)> {
    match model {
        Model::Clr(p) => p.score_pairs(held),
        Model::Baseline(p) => p.score_pairs(held),
    }
}

/// Test-set metrics on the normalized scale (targets clamped to `[0, 1]`).
pub fn test_metrics(model: &Model, splits: &Splits) -> Result<RunMetrics, MetricError> {
    RunMetrics::from_pairs(&pairs(model, &splits.test))
}

/// Test-set metrics on the original data scale, against unclamped values.
pub fn test_metrics_raw(model: &Model, splits: &Splits) -> Result<RunMetrics, MetricError> {
    let norm = splits.norm;
    let pairs: Vec<(f64, f64)> = splits
        .test
        .iter()
        .map(|h| (norm.invert(h.unclamped), norm.invert(model.predict(h.idx))))
        .collect();
    RunMetrics::from_pairs(&pairs)
}

pub fn checkpoint(model: Model, splits: &Splits) -> Checkpoint {
    Checkpoint {
        model,
        norm: Some(splits.norm),
    }
}

/// How each evaluation run chooses its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Tuning {
    Fixed,
    Swarm(SwarmConfig),
}

/// Settings for repeated seeded runs of the train/test protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub models: Vec<ModelSettings>,
    pub train: TrainConfig,
    pub tuning: Tuning,
    pub runs: usize,
    pub ratios: (f64, f64, f64),
    /// Run `r` splits with `split_seed + r`; ignored when a fixed split is given.
    pub split_seed: u64,
    /// Report metrics on the original data scale instead of the normalized one.
    pub raw_scale: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            models: vec![
                ModelSettings::default(),
                ModelSettings {
                    kind: ModelKind::Baseline,
                    ..ModelSettings::default()
                },
            ],
            train: TrainConfig::default(),
            tuning: Tuning::Fixed,
            runs: 20,
            ratios: crate::split::DEFAULT_RATIOS,
            split_seed: 0,
            raw_scale: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: ModelKind,
    pub run: usize,
    pub metrics: RunMetrics,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub dataset: String,
    pub model: ModelKind,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

/// One dataset to evaluate, optionally with a fixed split.
pub struct Dataset<'a> {
    pub name: String,
    pub tensor: &'a SparseTensor,
    pub assignment: Option<&'a crate::split::SplitAssignment>,
}

/// Runs `protocol.runs` seeded runs of every model on every dataset. Run
/// `r` initializes and shuffles with `seed + r`. Runs execute in parallel;
/// rows come back in (dataset, model, run) order.
pub fn evaluate(
    datasets: &[Dataset<'_>],
    protocol: &Protocol,
) -> Result<ResultsTable, PipelineError> {
    let mut jobs = Vec::new();
    for d in 0..datasets.len() {
        for (m, _) in protocol.models.iter().enumerate() {
            for run in 0..protocol.runs {
                jobs.push((d, m, run));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(d, m, run)| {
            let ds = &datasets[d];
            let assignment = match ds.assignment {
                Some(a) => a.clone(),
                None => split(
                    ds.tensor,
                    protocol.ratios,
                    protocol.split_seed.wrapping_add(run as u64),
                )?,
            };
            let splits = Splits::new(ds.tensor, &assignment)?;
            let base = &protocol.models[m];
            let settings = ModelSettings {
                init_seed: base.init_seed.wrapping_add(run as u64),
                ..base.clone()
            };
            let cfg = TrainConfig {
                shuffle_seed: protocol.train.shuffle_seed.wrapping_add(run as u64),
                ..protocol.train.clone()
            };
            let (model, report) = match &protocol.tuning {
                Tuning::Fixed => fit(&splits, &settings, &cfg)?,
                Tuning::Swarm(swarm) => {
                    let (model, tuned) = fit_tuned(&splits, &settings, swarm, &cfg)?;
                    (model, tuned.train)
                }
            };
            if report.stop_reason == StopReason::Diverged && report.epochs.is_empty() {
                return Err(PipelineError::Diverged { epochs: 0 });
            }
            let metrics = if protocol.raw_scale {
                test_metrics_raw(&model, &splits)?
            } else {
                test_metrics(&model, &splits)?
            };
            Ok(ResultRow {
                dataset: ds.name.clone(),
                model: settings.kind,
                run,
                metrics,
                stop_reason: report.stop_reason,
                seconds: report.seconds,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(ResultsTable { rows })
}

impl ResultsTable {
    /// Per (dataset, model) means, in first-appearance order.
    pub fn summaries(&self) -> Vec<Summary> {
        let mut keys: Vec<(String, ModelKind)> = Vec::new();
        for r in &self.rows {
            let key = (r.dataset.clone(), r.model);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .filter_map(|(dataset, model)| {
                let runs: Vec<RunMetrics> = self
                    .rows
                    .iter()
                    .filter(|r| r.dataset == dataset && r.model == model)
                    .map(|r| r.metrics)
                    .collect();
                let report = metrics::multi_run(&runs).ok()?;
                Some(Summary {
                    dataset,
                    model,
                    report,
                })
            })
            .collect()
    }

    /// `dataset,model,run,rmse,mae,seconds` per run.
    pub fn write_rows<W: Write>(&self, mut out: W, with_time: bool) -> std::io::Result<()> {
        writeln!(out, "dataset,model,run,rmse,mae,seconds")?;
        for r in &self.rows {
            let secs = if with_time { r.seconds } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.3}",
                r.dataset, r.model, r.run, r.metrics.rmse, r.metrics.mae, secs
            )?;
        }
        out.flush()
    }

    /// Dataset × model table of mean RMSE and MAE.
    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let summaries = self.summaries();
        let mut models: Vec<ModelKind> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        for s in &summaries {
            if !models.contains(&s.model) {
                models.push(s.model);
            }
            if !datasets.contains(&s.dataset) {
                datasets.push(s.dataset.clone());
            }
        }
        write!(out, "{:<12} {:<6}", "dataset", "metric")?;
        for m in &models {
            write!(out, " {:>10}", m.name())?;
        }
        writeln!(out)?;
        for d in &datasets {
            for (metric, pick) in [
                (
                    "RMSE",
                    (|r: &MetricReport| r.mean_rmse) as fn(&MetricReport) -> f64,
                ),
                ("MAE", |r: &MetricReport| r.mean_mae),
            ] {
                write!(out, "{:<12} {:<6}", d, metric)?;
                for m in &models {
                    match summaries.iter().find(|s| &s.dataset == d && s.model == *m) {
                        Some(s) => write!(out, " {:>10.4}", pick(&s.report))?,
                        None => write!(out, " {:>10}", "-")?,
                    }
                }
                writeln!(out)?;
            }
        }
        out.flush()
    }
}
