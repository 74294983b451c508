//! Protocol-level checks shared by the integration tests and the
//! acceptance runner. Each returns a one-line description on success.

use std::io::BufReader;

use clr_impute::checkpoint::Checkpoint;
use clr_impute::pipeline::{fit, fit_tuned, ModelKind, ModelSettings};
use clr_impute::sgd::StopReason;
use clr_impute::synth::{generate, SynthSpec, TemporalMode};
use clr_impute::{split, Dims, Entry, EntryIndex, SparseTensor, Splits, SwarmConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

/// The planted instance: 10×8×100, rank 3, σ = 0.01, 20% observed.
pub fn planted(temporal: TemporalMode, seed: u64) -> SparseTensor {
    let spec = SynthSpec {
        noise_sigma: 0.01,
        observed_fraction: 0.2,
        ..SynthSpec::new(Dims::new(10, 8, 100).unwrap(), 3, temporal, seed)
    };
    generate(&spec).expect("valid spec").0
}

pub fn planted_splits(rho: f64, split_seed: u64) -> Splits {
    let t = planted(TemporalMode::SmoothAr { rho }, 1);
    Splits::new(&t, &split(&t, (0.1, 0.2, 0.7), split_seed).unwrap()).unwrap()
}

/// Split ratios realized on `n` entries, each within `tol` of the target.
pub fn split_proportions(n: usize, tol: f64) -> Check {
    let dims = Dims::new(100, 100, n.div_ceil(10_000)).unwrap();
    let entries: Vec<Entry> = (0..n)
        .map(|m| Entry::new(m % 100, (m / 100) % 100, m / 10_000, m as f64))
        .collect();
    let t = SparseTensor::from_entries(dims, entries).map_err(|e| e.to_string())?;
    let target = [0.1, 0.2, 0.7];
    let a = split(&t, (0.1, 0.2, 0.7), 2024).map_err(|e| e.to_string())?;
    let counts = a.counts();
    let realized: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    for (r, want) in realized.iter().zip(target) {
        if (r - want).abs() > tol {
            return Err(format!("realized {realized:?} on {n} entries"));
        }
    }
    Ok(format!(
        "realized {:.4}/{:.4}/{:.4} on {n} entries",
        realized[0], realized[1], realized[2]
    ))
}

/// Training stops at the first epoch `t ≥ 2` with
/// `|ε^t − ε^(t−1)| < tol`, and never earlier. Both models share the loop;
/// at least one of them must actually converge so the trigger is exercised.
pub fn convergence_trigger(tol: f64) -> Check {
    let s = planted_splits(0.9, 0);
    let cfg = TrainConfig {
        tol,
        ..TrainConfig::default()
    };
    let mut notes = Vec::new();
    let mut exercised = false;
    for kind in [ModelKind::Baseline, ModelKind::Clr] {
        let settings = ModelSettings {
            kind,
            ..ModelSettings::default()
        };
        let (_, report) = fit(&s, &settings, &cfg).map_err(|e| e.to_string())?;
        let obj: Vec<f64> = report.epochs.iter().map(|e| e.objective).collect();
        let first = obj
            .windows(2)
            .position(|w| (w[1] - w[0]).abs() < tol)
            .map(|p| p + 2);
        match (first, report.stop_reason) {
            (Some(t), StopReason::Converged) if t == obj.len() => {
                exercised = true;
                notes.push(format!(
                    "{kind} stopped at epoch {t} (|Δε| = {:.2e})",
                    (obj[t - 1] - obj[t - 2]).abs()
                ));
            }
            (None, StopReason::MaxEpochs) if obj.len() == cfg.max_epochs => {
                notes.push(format!(
                    "{kind} ran all {} epochs, |Δε| never below tol",
                    obj.len()
                ));
            }
            (first, reason) => {
                return Err(format!(
                "{kind}: first qualifying epoch {first:?}, stopped after {} epochs ({reason:?})",
                obj.len()
            ))
            }
        }
    }
    if exercised {
        Ok(notes.join("; "))
    } else {
        Err(format!("trigger never exercised: {}", notes.join("; ")))
    }
}

/// Largest prediction change over every cell after a checkpoint
/// write/read cycle, for both model kinds.
pub fn checkpoint_round_trip() -> Result<f64, String> {
    let s = planted_splits(0.9, 0);
    let cfg = TrainConfig {
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Clr, ModelKind::Baseline] {
        let settings = ModelSettings {
            kind,
            ..ModelSettings::default()
        };
        let (model, _) = fit(&s, &settings, &cfg).map_err(|e| e.to_string())?;
        let ckpt = clr_impute::pipeline::checkpoint(model, &s);
        let mut buf = Vec::new();
        ckpt.write(&mut buf).map_err(|e| e.to_string())?;
        let back = Checkpoint::read(BufReader::new(&buf[..])).map_err(|e| e.to_string())?;
        if back.norm != ckpt.norm {
            return Err("normalization changed".into());
        }
        let d = s.dims;
        for i in 0..d.stations {
            for j in 0..d.parameters {
                for k in 0..d.slots {
                    let idx = EntryIndex::new(i, j, k);
                    let diff = (ckpt.model.predict(idx) - back.model.predict(idx)).abs();
                    worst = worst.max(diff);
                }
            }
        }
    }
    Ok(worst)
}

/// A one-particle swarm without inertia or attraction must retrace plain
/// training exactly.
pub fn degenerate_swarm_matches_train(max_epochs: usize) -> Check {
    let s = planted_splits(0.9, 0);
    let cfg = TrainConfig {
        max_epochs,
        shuffle_seed: 7,
        ..TrainConfig::default()
    };
    let swarm = SwarmConfig {
        particles: 1,
        inertia: 0.0,
        cognitive: 0.0,
        social: 0.0,
        seed: 99,
        ..SwarmConfig::default()
    };
    for kind in [ModelKind::Clr, ModelKind::Baseline] {
        let settings = ModelSettings {
            kind,
            init_seed: 3,
            ..ModelSettings::default()
        };
        let (fixed, fixed_report) = fit(&s, &settings, &cfg).map_err(|e| e.to_string())?;
        let (tuned, tuned_report) =
            fit_tuned(&s, &settings, &swarm, &cfg).map_err(|e| e.to_string())?;
        if fixed != tuned {
            return Err(format!("{kind}: parameters differ"));
        }
        let a: Vec<f64> = fixed_report.epochs.iter().map(|e| e.objective).collect();
        let b: Vec<f64> = tuned_report
            .train
            .epochs
            .iter()
            .map(|e| e.objective)
            .collect();
        if a != b {
            return Err(format!("{kind}: objective traces differ"));
        }
        if fixed_report.stop_reason != tuned_report.train.stop_reason {
            return Err(format!("{kind}: stop reasons differ"));
        }
    }
    Ok(format!(
        "identical parameters and traces over up to {max_epochs} epochs"
    ))
}

/// Global-best validation RMSE after every round of a default swarm.
pub fn gb_trace(max_epochs: usize, split_seed: u64) -> Result<Vec<f64>, String> {
    let s = planted_splits(0.9, split_seed);
    let cfg = TrainConfig {
        max_epochs,
        ..TrainConfig::default()
    };
    let (_, report) = fit_tuned(&s, &ModelSettings::default(), &SwarmConfig::default(), &cfg)
        .map_err(|e| e.to_string())?;
    Ok(report.gb_trace())
}

pub fn non_increasing(trace: &[f64]) -> Check {
    match trace.windows(2).position(|w| w[1] > w[0]) {
        Some(p) => Err(format!(
            "rose from {} to {} at round {}",
            trace[p],
            trace[p + 1],
            p + 2
        )),
        None => Ok(format!(
            "{} rounds, {:.5} -> {:.5}",
            trace.len(),
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN)
        )),
    }
}

/// Random `(target, prediction)` sets for metric identities.
pub fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(1..60);
    (0..n)
        .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect()
}

pub fn metric_identities(sets: usize) -> Check {
    use clr_impute::metrics::{mae, rmse};
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 0..sets {
        let pairs = random_pairs(&mut rng);
        let (r, m) = (rmse(&pairs).unwrap(), mae(&pairs).unwrap());
        if m > r {
            return Err(format!("set {n}: mae {m} > rmse {r}"));
        }
        let perfect: Vec<(f64, f64)> = pairs.iter().map(|&(x, _)| (x, x)).collect();
        if rmse(&perfect).unwrap() != 0.0 || mae(&perfect).unwrap() != 0.0 {
            return Err(format!("set {n}: perfect predictions score nonzero"));
        }
    }
    let hand = [(0.2, 0.25), (0.4, 0.3)];
    let (r, m) = (rmse(&hand).unwrap(), mae(&hand).unwrap());
    let r_want = (0.0125f64 / 2.0).sqrt();
    let m_want = 0.075;
    if (r - r_want).abs() > 1e-12 || (m - m_want).abs() > 1e-12 {
        return Err(format!("hand example: rmse {r}, mae {m}"));
    }
    Ok(format!(
        "{sets} random sets; hand example rmse {r:.17}, mae {m}"
    ))
}
