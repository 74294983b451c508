//! Per-entry stochastic gradient descent shared by the CLR model and the
//! linear baseline.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics;
use crate::model::{sigmoid, ClrParams};
use crate::split::{HeldOut, Splits};
use crate::tensor::Entry;

pub const DEFAULT_MAX_EPOCHS: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("regularization must be non-negative and finite, got {0}")]
    Regularization(f64),
    #[error("max_epochs must be at least 1")]
    MaxEpochs,
    #[error("convergence tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("training split is empty")]
    EmptyTrain,
}

/// A parameter became non-finite while training.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("training diverged")]
pub struct Diverged;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.01,
            lambda: 0.001,
            max_epochs: DEFAULT_MAX_EPOCHS,
            tol: DEFAULT_TOL,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ConfigError::LearningRate(self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ConfigError::Regularization(self.lambda));
        }
        if self.max_epochs == 0 {
            return Err(ConfigError::MaxEpochs);
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError::Tolerance(self.tol));
        }
        Ok(())
    }
}

/// A model trainable by per-entry SGD.
pub trait SgdModel: Clone + Send + Sync {
    /// Reusable per-sample buffers.
    type Scratch: Send;

    fn scratch(&self) -> Self::Scratch;

    /// One SGD update on a single observed entry. Every gradient is taken at
    /// the pre-update parameters, then all touched parameters move together.
    fn sgd_update(
        &mut self,
        scratch: &mut Self::Scratch,
        entry: &Entry,
        eta: f64,
        lambda: f64,
    ) -> Result<(), Diverged>;

    fn objective(&self, entries: &[Entry], lambda: f64) -> f64;

    /// `(target, prediction)` pairs for held-out entries.
    fn score_pairs(&self, held: &[HeldOut]) -> Vec<(f64, f64)>;

    fn is_finite(&self) -> bool;
}

/// Gradient of the single-entry loss with respect to every parameter that
/// entry touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrGradient {
    pub station: Vec<f64>,
    pub parameter: Vec<f64>,
    /// Only the row `k` of the temporal factors; the earlier rows that feed
    /// the other kernel taps are held fixed per sample.
    pub temporal: Vec<f64>,
    /// `C × R` row-major.
    pub kernel: Vec<f64>,
    pub station_bias: f64,
    pub parameter_bias: f64,
    pub slot_bias: f64,
    activated: Vec<f64>,
}

impl ClrGradient {
    pub fn new(rank: usize, kernel_len: usize) -> Self {
        ClrGradient {
            station: vec![0.0; rank],
            parameter: vec![0.0; rank],
            temporal: vec![0.0; rank],
            kernel: vec![0.0; rank * kernel_len],
            station_bias: 0.0,
            parameter_bias: 0.0,
            slot_bias: 0.0,
            activated: vec![0.0; rank],
        }
    }

    fn is_finite(&self) -> bool {
        [&self.station, &self.parameter, &self.temporal, &self.kernel]
            .iter()
            .all(|g| g.iter().all(|x| x.is_finite()))
            && self.station_bias.is_finite()
            && self.parameter_bias.is_finite()
            && self.slot_bias.is_finite()
    }
}

/// Fills `g` with the stochastic gradients of
/// `½(x - x̃)² + (λ/2)(Σ_r s² + u² + v_k² + Σ_c w² + a² + e² + o²)`
/// for one entry.
pub fn per_sample_gradients(params: &ClrParams, entry: &Entry, lambda: f64, g: &mut ClrGradient) {
    let (i, j, k) = (entry.idx.i, entry.idx.j, entry.idx.k);
    let rank = params.rank();
    let taps = params.kernel_len();
    let s = params.station.row(i);
    let u = params.parameter.row(j);
    let v = params.temporal.row(k);

    let mut logit = params.station_bias[i] + params.parameter_bias[j] + params.slot_bias[k];
    for r in 0..rank {
        let act = params.activated_temporal(k, r);
        g.activated[r] = act;
        logit += s[r] * u[r] * act;
    }
    let pred = sigmoid(logit);
    let phi = -(entry.value - pred) * pred * (1.0 - pred);

    for r in 0..rank {
        let act = g.activated[r];
        g.station[r] = phi * u[r] * act + lambda * s[r];
        g.parameter[r] = phi * s[r] * act + lambda * u[r];
        let inner = phi * s[r] * u[r] * act * (1.0 - act);
        g.temporal[r] = inner * params.kernel.get(0, r) + lambda * v[r];
        for c in 0..taps {
            let lagged = if c <= k {
                params.temporal.get(k - c, r)
            } else {
                0.0
            };
            g.kernel[c * rank + r] = inner * lagged + lambda * params.kernel.get(c, r);
        }
    }
    g.station_bias = phi + lambda * params.station_bias[i];
    g.parameter_bias = phi + lambda * params.parameter_bias[j];
    g.slot_bias = phi + lambda * params.slot_bias[k];
}

/// Moves the parameters touched by `entry` by `-eta * g`.
pub fn apply_gradient(params: &mut ClrParams, entry: &Entry, g: &ClrGradient, eta: f64) {
    let (i, j, k) = (entry.idx.i, entry.idx.j, entry.idx.k);
    let axpy = |dst: &mut [f64], src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d -= eta * s;
        }
    };
    axpy(params.station.row_mut(i), &g.station);
    axpy(params.parameter.row_mut(j), &g.parameter);
    axpy(params.temporal.row_mut(k), &g.temporal);
    axpy(params.kernel.as_mut_slice(), &g.kernel);
    params.station_bias[i] -= eta * g.station_bias;
    params.parameter_bias[j] -= eta * g.parameter_bias;
    params.slot_bias[k] -= eta * g.slot_bias;
}

fn touched_finite(params: &ClrParams, entry: &Entry) -> bool {
    let (i, j, k) = (entry.idx.i, entry.idx.j, entry.idx.k);
    params.station.row(i).iter().all(|x| x.is_finite())
        && params.parameter.row(j).iter().all(|x| x.is_finite())
        && params.temporal.row(k).iter().all(|x| x.is_finite())
        && params.kernel.is_finite()
        && params.station_bias[i].is_finite()
        && params.parameter_bias[j].is_finite()
        && params.slot_bias[k].is_finite()
}

impl SgdModel for ClrParams {
    type Scratch = ClrGradient;

    fn scratch(&self) -> ClrGradient {
        ClrGradient::new(self.rank(), self.kernel_len())
    }

    fn sgd_update(
        &mut self,
        g: &mut ClrGradient,
        entry: &Entry,
        eta: f64,
        lambda: f64,
    ) -> Result<(), Diverged> {
        per_sample_gradients(self, entry, lambda, g);
        if !g.is_finite() {
            return Err(Diverged);
        }
        apply_gradient(self, entry, g, eta);
        if touched_finite(self, entry) {
            Ok(())
        } else {
            Err(Diverged)
        }
    }

    fn objective(&self, entries: &[Entry], lambda: f64) -> f64 {
        ClrParams::objective(self, entries, lambda)
    }

    fn score_pairs(&self, held: &[HeldOut]) -> Vec<(f64, f64)> {
        let p = self.predictor();
        held.iter()
            .map(|h| (h.target, p.predict(h.idx).0))
            .collect()
    }

    fn is_finite(&self) -> bool {
        ClrParams::is_finite(self)
    }
}

/// One pass over `train` in an order shuffled by `rng`, updating after
/// every entry.
pub fn sgd_epoch<M: SgdModel>(
    params: &mut M,
    train: &[Entry],
    eta: f64,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), Diverged> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut scratch = params.scratch();
    for n in order {
        params.sgd_update(&mut scratch, &train[n], eta, lambda)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxEpochs,
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub objective: f64,
    pub val_rmse: Option<f64>,
    pub val_mae: Option<f64>,
    pub eta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

impl TrainReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.objective)
    }

    /// Writes the per-epoch convergence log as CSV.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,objective,val_rmse,val_mae,eta,lambda")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.objective,
                opt(e.val_rmse),
                opt(e.val_mae),
                e.eta,
                e.lambda
            )?;
        }
        out.flush()
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Validation RMSE and MAE, or `None` for an empty validation set.
pub fn validation_metrics<M: SgdModel>(params: &M, validation: &[HeldOut]) -> Option<(f64, f64)> {
    let pairs = params.score_pairs(validation);
    let rmse = metrics::rmse(&pairs).ok()?;
    let mae = metrics::mae(&pairs).ok()?;
    Some((rmse, mae))
}

/// Result of one epoch run by an [`EpochTrainer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochOutcome {
    /// The epoch finished; `converged` is set when the training objective
    /// moved by less than the tolerance since the previous epoch.
    Done { objective: f64, converged: bool },
    /// A parameter went non-finite; the parameters were rolled back to
    /// their state before the epoch.
    Diverged,
}

/// Owns one model and its shuffle stream and advances it an epoch at a time.
#[derive(Debug, Clone)]
pub struct EpochTrainer<M> {
    params: M,
    rng: ChaCha8Rng,
    previous: Option<f64>,
    epochs: usize,
}

impl<M: SgdModel> EpochTrainer<M> {
    pub fn new(params: M, shuffle_seed: u64) -> Self {
        EpochTrainer {
            params,
            rng: ChaCha8Rng::seed_from_u64(shuffle_seed),
            previous: None,
            epochs: 0,
        }
    }

    pub fn params(&self) -> &M {
        &self.params
    }

    pub fn into_params(self) -> M {
        self.params
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.previous
    }

    pub fn run_epoch(&mut self, train: &[Entry], eta: f64, lambda: f64, tol: f64) -> EpochOutcome {
        let snapshot = self.params.clone();
        let objective = match sgd_epoch(&mut self.params, train, eta, lambda, &mut self.rng) {
            Ok(()) => self.params.objective(train, lambda),
            Err(Diverged) => f64::NAN,
        };
        if !objective.is_finite() {
            self.params = snapshot;
            return EpochOutcome::Diverged;
        }
        self.epochs += 1;
        let converged = self
            .previous
            .is_some_and(|prev| (objective - prev).abs() < tol);
        self.previous = Some(objective);
        EpochOutcome::Done {
            objective,
            converged,
        }
    }
}

/// Runs epochs until the training objective changes by less than
/// `cfg.tol` between consecutive epochs, `cfg.max_epochs` is reached, or
/// training diverges. On divergence the last finite parameters are returned.
pub fn train<M: SgdModel>(
    params: M,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<(M, TrainReport), ConfigError> {
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(ConfigError::EmptyTrain);
    }
    let start = Instant::now();
    let mut trainer = EpochTrainer::new(params, cfg.shuffle_seed);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        match trainer.run_epoch(&splits.train, cfg.eta, cfg.lambda, cfg.tol) {
            EpochOutcome::Diverged => {
                stop_reason = StopReason::Diverged;
                break;
            }
            EpochOutcome::Done {
                objective,
                converged,
            } => {
                let val = validation_metrics(trainer.params(), &splits.validation);
                epochs.push(EpochRecord {
                    epoch,
                    objective,
                    val_rmse: val.map(|v| v.0),
                    val_mae: val.map(|v| v.1),
                    eta: cfg.eta,
                    lambda: cfg.lambda,
                });
                if converged {
                    stop_reason = StopReason::Converged;
                    break;
                }
            }
        }
    }
    let report = TrainReport {
        epochs,
        stop_reason,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((trainer.into_params(), report))
}
