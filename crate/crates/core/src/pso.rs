//! Particle swarm adaptation of the learning rate and regularization.
//!
//! Every particle is a `(η, λ)` position that owns a private model. Each
//! round, every particle trains its model for one epoch with its own
//! hyperparameters, is scored by validation RMSE, and then moves under the
//! usual inertia / personal-best / global-best velocity rule.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::metrics::{self, MetricError};
use crate::sgd::{
    opt, validation_metrics, ConfigError, EpochOutcome, EpochRecord, EpochTrainer, SgdModel,
    StopReason, TrainConfig, TrainReport,
};
use crate::split::{HeldOut, Splits};

/// A point in hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub eta: f64,
    pub lambda: f64,
}

impl Hyperparams {
    fn coords(self) -> [f64; 2] {
        [self.eta, self.lambda]
    }

    fn from_coords(c: [f64; 2]) -> Self {
        Hyperparams {
            eta: c[0],
            lambda: c[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmConfig {
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub eta_bounds: (f64, f64),
    pub lambda_bounds: (f64, f64),
    /// Maximum absolute velocity per coordinate `(η, λ)`.
    pub velocity_clamp: (f64, f64),
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        let eta_bounds = (1e-4, 1e-1);
        let lambda_bounds = (1e-4, 1e-1);
        SwarmConfig {
            particles: 10,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            eta_bounds,
            lambda_bounds,
            velocity_clamp: (
                0.2 * (eta_bounds.1 - eta_bounds.0),
                0.2 * (lambda_bounds.1 - lambda_bounds.0),
            ),
            seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.particles == 0 {
            return Err("swarm needs at least one particle".into());
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive factor", self.cognitive),
            ("social factor", self.social),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, (lo, hi)) in [("eta", self.eta_bounds), ("lambda", self.lambda_bounds)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(format!(
                    "{name} bounds must satisfy low < high, got [{lo}, {hi}]"
                ));
            }
        }
        if self.eta_bounds.0 <= 0.0 {
            return Err("eta lower bound must be positive".into());
        }
        if self.lambda_bounds.0 < 0.0 {
            return Err("lambda lower bound must be non-negative".into());
        }
        let (ve, vl) = self.velocity_clamp;
        if !(ve > 0.0 && vl > 0.0) {
            return Err("velocity clamp must be positive".into());
        }
        Ok(())
    }

    fn bounds(&self) -> [(f64, f64); 2] {
        [self.eta_bounds, self.lambda_bounds]
    }

    fn vmax(&self) -> [f64; 2] {
        [self.velocity_clamp.0, self.velocity_clamp.1]
    }

    pub fn clamp_position(&self, p: Hyperparams) -> Hyperparams {
        let b = self.bounds();
        let c = p.coords();
        Hyperparams::from_coords([c[0].clamp(b[0].0, b[0].1), c[1].clamp(b[1].0, b[1].1)])
    }
}

/// Position, velocity and personal best of one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub position: Hyperparams,
    pub velocity: [f64; 2],
    pub best_position: Hyperparams,
    /// Lowest validation RMSE this particle has produced (∞ before the first).
    pub best_q: f64,
}

impl ParticleState {
    pub fn new(position: Hyperparams, velocity: [f64; 2]) -> Self {
        ParticleState {
            position,
            velocity,
            best_position: position,
            best_q: f64::INFINITY,
        }
    }

    /// Records a new score, replacing the personal best when it improves.
    pub fn observe(&mut self, q: f64) -> bool {
        if q < self.best_q {
            self.best_q = q;
            self.best_position = self.position;
            true
        } else {
            false
        }
    }
}

/// Best position found by the swarm so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalBest {
    pub position: Hyperparams,
    pub q: f64,
    pub particle: usize,
}

/// Velocity and position update with caller-supplied `(r1, r2)` draws per
/// particle.
pub fn pso_step_with(
    states: &mut [ParticleState],
    gb: Hyperparams,
    cfg: &SwarmConfig,
    mut draws: impl FnMut(usize) -> (f64, f64),
) {
    let bounds = cfg.bounds();
    let vmax = cfg.vmax();
    let g = gb.coords();
    for (p, st) in states.iter_mut().enumerate() {
        let (r1, r2) = draws(p);
        let m = st.position.coords();
        let pb = st.best_position.coords();
        let mut next = [0.0; 2];
        for d in 0..2 {
            let v = cfg.inertia * st.velocity[d]
                + cfg.cognitive * r1 * (pb[d] - m[d])
                + cfg.social * r2 * (g[d] - m[d]);
            st.velocity[d] = v.clamp(-vmax[d], vmax[d]);
            next[d] = (m[d] + st.velocity[d]).clamp(bounds[d].0, bounds[d].1);
        }
        st.position = Hyperparams::from_coords(next);
    }
}

/// Velocity and position update with `r1, r2 ~ U[0, 1]` drawn fresh for
/// every particle.
pub fn pso_step<R: Rng>(
    states: &mut [ParticleState],
    gb: Hyperparams,
    cfg: &SwarmConfig,
    rng: &mut R,
) {
    pso_step_with(states, gb, cfg, |_| (rng.random(), rng.random()));
}

/// Validation RMSE of one particle's model.
pub fn fitness_q<M: SgdModel>(params: &M, validation: &[HeldOut]) -> Result<f64, MetricError> {
    metrics::rmse(&params.score_pairs(validation))
}

/// Relative fitness of particle `p` (0-based) after a round:
/// `(Q_p(t+1) − Q_{p−1}(t+1)) / (Q_last(t+1) − Q_last(t))`, where the
/// predecessor of the first particle is the last particle of the previous
/// round. `None` when the denominator is zero or any term is non-finite.
pub fn relative_fitness(previous: &[f64], current: &[f64], p: usize) -> Option<f64> {
    let last = current.len().checked_sub(1)?;
    if previous.len() != current.len() || p > last {
        return None;
    }
    let before = if p == 0 {
        previous[last]
    } else {
        current[p - 1]
    };
    let denom = current[last] - previous[last];
    if denom == 0.0 {
        return None;
    }
    let f = (current[p] - before) / denom;
    f.is_finite().then_some(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord {
    pub eta: f64,
    pub lambda: f64,
    /// `None` when the particle diverged this round.
    pub q: Option<f64>,
    pub f: Option<f64>,
    pub best_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub particles: Vec<ParticleRecord>,
    pub gb: GlobalBest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    /// Per-round record of the particle holding the global best.
    pub train: TrainReport,
    pub rounds: Vec<RoundRecord>,
    pub gb: GlobalBest,
}

impl TuneReport {
    /// Global-best Q after each round.
    pub fn gb_trace(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.gb.q).collect()
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "round,particle,eta,lambda,q,f,pb_q,gb_eta,gb_lambda,gb_q"
        )?;
        for r in &self.rounds {
            for (p, rec) in r.particles.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.round,
                    p,
                    rec.eta,
                    rec.lambda,
                    opt(rec.q),
                    opt(rec.f),
                    rec.best_q,
                    r.gb.position.eta,
                    r.gb.position.lambda,
                    r.gb.q
                )?;
            }
        }
        out.flush()
    }
}

pub enum TuneError<M> {
    Config(ConfigError),
    Swarm(String),
    EmptyValidation,
    /// Every particle diverged in the same round. Carries the global best
    /// found so far and the current model of the particle that holds it.
    AllDiverged {
        round: usize,
        best: Option<(GlobalBest, M)>,
    },
}

impl<M> fmt::Debug for TuneError<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl<M> fmt::Display for TuneError<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TuneError::Config(e) => write!(f, "{e}"),
            TuneError::Swarm(e) => write!(f, "invalid swarm configuration: {e}"),
            TuneError::EmptyValidation => write!(f, "validation split is empty"),
            TuneError::AllDiverged { round, best } => {
                write!(f, "every particle diverged in round {round}")?;
                if let Some((gb, _)) = best {
                    write!(
                        f,
                        " (best so far: eta={}, lambda={}, Q={})",
                        gb.position.eta, gb.position.lambda, gb.q
                    )?;
                }
                Ok(())
            }
        }
    }
}

impl<M> std::error::Error for TuneError<M> {}

impl<M> From<ConfigError> for TuneError<M> {
    fn from(e: ConfigError) -> Self {
        TuneError::Config(e)
    }
}

/// Initial swarm: particle 0 starts at the configured `(η, λ)`, the rest
/// uniformly inside the bounds; velocities uniform within the clamp.
pub fn init_swarm<R: Rng>(
    cfg: &SwarmConfig,
    start: Hyperparams,
    rng: &mut R,
) -> Vec<ParticleState> {
    let bounds = cfg.bounds();
    let vmax = cfg.vmax();
    (0..cfg.particles)
        .map(|p| {
            let position = if p == 0 {
                cfg.clamp_position(start)
            } else {
                Hyperparams::from_coords([
                    rng.random_range(bounds[0].0..=bounds[0].1),
                    rng.random_range(bounds[1].0..=bounds[1].1),
                ])
            };
            let velocity = [
                rng.random_range(-vmax[0]..=vmax[0]),
                rng.random_range(-vmax[1]..=vmax[1]),
            ];
            ParticleState::new(position, velocity)
        })
        .collect()
}

struct RoundResult {
    objective: f64,
    converged: bool,
    q: f64,
    mae: f64,
}

/// Trains a swarm of models, adapting `(η, λ)` between epochs.
///
/// `init(p)` builds the starting parameters of particle `p`; particle `p`
/// shuffles with seed `train_cfg.shuffle_seed + p`. Stops when every
/// particle's training objective moved by less than `train_cfg.tol` in the
/// same round, or after `train_cfg.max_epochs` rounds. Returns the current
/// model of the particle holding the global best.
pub fn tune_train<M: SgdModel>(
    init: impl Fn(usize) -> M,
    splits: &Splits,
    swarm_cfg: &SwarmConfig,
    train_cfg: &TrainConfig,
) -> Result<(M, TuneReport), TuneError<M>> {
    train_cfg.validate()?;
    swarm_cfg.validate().map_err(TuneError::Swarm)?;
    if splits.train.is_empty() {
        return Err(ConfigError::EmptyTrain.into());
    }
    if splits.validation.is_empty() {
        return Err(TuneError::EmptyValidation);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(swarm_cfg.seed);
    let mut states = init_swarm(
        swarm_cfg,
        Hyperparams {
            eta: train_cfg.eta,
            lambda: train_cfg.lambda,
        },
        &mut rng,
    );
    let mut trainers: Vec<EpochTrainer<M>> = (0..swarm_cfg.particles)
        .map(|p| EpochTrainer::new(init(p), train_cfg.shuffle_seed.wrapping_add(p as u64)))
        .collect();

    let mut gb: Option<GlobalBest> = None;
    let mut previous_q: Option<Vec<f64>> = None;
    let mut rounds = Vec::new();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for round in 1..=train_cfg.max_epochs {
        let results: Vec<Option<RoundResult>> = trainers
            .par_iter_mut()
            .zip(states.par_iter())
            .map(|(trainer, st)| {
                let Hyperparams { eta, lambda } = st.position;
                match trainer.run_epoch(&splits.train, eta, lambda, train_cfg.tol) {
                    EpochOutcome::Diverged => None,
                    EpochOutcome::Done {
                        objective,
                        converged,
                    } => {
                        let (q, mae) = validation_metrics(trainer.params(), &splits.validation)?;
                        Some(RoundResult {
                            objective,
                            converged,
                            q,
                            mae,
                        })
                    }
                }
            })
            .collect();

        if results.iter().all(Option::is_none) {
            let best = gb.map(|g| (g, trainers[g.particle].params().clone()));
            return Err(TuneError::AllDiverged { round, best });
        }

        let q: Vec<f64> = results
            .iter()
            .map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.q))
            .collect();
        for (st, &qp) in states.iter_mut().zip(&q) {
            st.observe(qp);
        }
        for (p, &qp) in q.iter().enumerate() {
            if gb.is_none_or(|g| qp < g.q) {
                gb = Some(GlobalBest {
                    position: states[p].position,
                    q: qp,
                    particle: p,
                });
            }
        }
        let best = gb.expect("at least one particle produced a finite score");

        let particles = states
            .iter()
            .enumerate()
            .map(|(p, st)| ParticleRecord {
                eta: st.position.eta,
                lambda: st.position.lambda,
                q: results[p].as_ref().map(|r| r.q),
                f: previous_q
                    .as_deref()
                    .and_then(|prev| relative_fitness(prev, &q, p)),
                best_q: st.best_q,
            })
            .collect();
        rounds.push(RoundRecord {
            round,
            particles,
            gb: best,
        });

        if let Some(r) = &results[best.particle] {
            let pos = states[best.particle].position;
            epochs.push(EpochRecord {
                epoch: round,
                objective: r.objective,
                val_rmse: Some(r.q),
                val_mae: Some(r.mae),
                eta: pos.eta,
                lambda: pos.lambda,
            });
        }
        previous_q = Some(q);

        if results
            .iter()
            .all(|r| r.as_ref().is_some_and(|r| r.converged))
        {
            stop_reason = StopReason::Converged;
            break;
        }
        if round < train_cfg.max_epochs {
            pso_step(&mut states, best.position, swarm_cfg, &mut rng);
        }
    }

    let gb = gb.expect("at least one round ran");
    let report = TuneReport {
        train: TrainReport {
            epochs,
            stop_reason,
            seconds: start.elapsed().as_secs_f64(),
        },
        rounds,
        gb,
    };
    let params = trainers.swap_remove(gb.particle).into_params();
    Ok((params, report))
}
