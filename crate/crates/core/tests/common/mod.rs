//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

pub mod checks;

use clr_impute::baseline::{baseline_gradients, BiasCpGradient, BiasCpParams};
use clr_impute::factor::FactorMatrix;
use clr_impute::sgd::{per_sample_gradients, ClrGradient};
use clr_impute::{ClrParams, Dims, Entry};
use rand::Rng;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Direct summation `Σ_{c ≤ k} v[k-c][r] · w[c][r]`.
pub fn conv_oracle(v: &FactorMatrix, w: &FactorMatrix, k: usize, r: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..w.rows() {
        if c > k {
            break;
        }
        acc += v.get(k - c, r) * w.get(c, r);
    }
    acc
}

/// Per-entry loss with its own forward pass.
pub fn clr_sample_loss(p: &ClrParams, e: &Entry, lambda: f64) -> f64 {
    let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
    let rank = p.station.cols();
    let mut z = p.station_bias[i] + p.parameter_bias[j] + p.slot_bias[k];
    let mut reg = p.station_bias[i].powi(2) + p.parameter_bias[j].powi(2) + p.slot_bias[k].powi(2);
    for r in 0..rank {
        let vt = logistic(conv_oracle(&p.temporal, &p.kernel, k, r));
        z += p.station.get(i, r) * p.parameter.get(j, r) * vt;
        reg += p.station.get(i, r).powi(2)
            + p.parameter.get(j, r).powi(2)
            + p.temporal.get(k, r).powi(2);
    }
    reg += p.kernel.as_slice().iter().map(|w| w * w).sum::<f64>();
    let d = e.value - logistic(z);
    0.5 * d * d + 0.5 * lambda * reg
}

pub fn baseline_sample_loss(p: &BiasCpParams, e: &Entry, lambda: f64) -> f64 {
    let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
    let mut y = p.station_bias[i] + p.parameter_bias[j] + p.slot_bias[k];
    let mut reg = p.station_bias[i].powi(2) + p.parameter_bias[j].powi(2) + p.slot_bias[k].powi(2);
    for r in 0..p.station.cols() {
        y += p.station.get(i, r) * p.parameter.get(j, r) * p.temporal.get(k, r);
        reg += p.station.get(i, r).powi(2)
            + p.parameter.get(j, r).powi(2)
            + p.temporal.get(k, r).powi(2);
    }
    let d = e.value - y;
    0.5 * d * d + 0.5 * lambda * reg
}

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, half: f64) -> FactorMatrix {
    FactorMatrix::from_fn(rows, cols, |_, _| rng.random_range(-half..half))
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

pub fn random_clr<R: Rng>(rng: &mut R, dims: Dims, rank: usize, taps: usize) -> ClrParams {
    ClrParams::from_parts(
        uniform_matrix(rng, dims.stations, rank, 1.0),
        uniform_matrix(rng, dims.parameters, rank, 1.0),
        uniform_matrix(rng, dims.slots, rank, 1.0),
        uniform_matrix(rng, taps, rank, 1.0),
        uniform_vec(rng, dims.stations, 1.0),
        uniform_vec(rng, dims.parameters, 1.0),
        uniform_vec(rng, dims.slots, 1.0),
    )
    .expect("consistent shapes")
}

pub fn random_baseline<R: Rng>(rng: &mut R, dims: Dims, rank: usize) -> BiasCpParams {
    BiasCpParams::from_parts(
        uniform_matrix(rng, dims.stations, rank, 1.0),
        uniform_matrix(rng, dims.parameters, rank, 1.0),
        uniform_matrix(rng, dims.slots, rank, 1.0),
        uniform_vec(rng, dims.stations, 1.0),
        uniform_vec(rng, dims.parameters, 1.0),
        uniform_vec(rng, dims.slots, 1.0),
    )
    .expect("consistent shapes")
}

pub fn random_entry<R: Rng>(rng: &mut R, dims: Dims) -> Entry {
    Entry::new(
        rng.random_range(0..dims.stations),
        rng.random_range(0..dims.parameters),
        rng.random_range(0..dims.slots),
        rng.random_range(0.0..1.0),
    )
}

const STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

/// Comparison of one analytic partial against its finite difference.
#[derive(Debug, Clone)]
pub struct Partial {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Partial {
    pub fn ok(&self) -> bool {
        let diff = (self.analytic - self.numeric).abs();
        diff <= ABS_FLOOR || diff <= REL_TOL * self.analytic.abs().max(self.numeric.abs())
    }
}

fn central<P: Clone>(p: &P, loss: impl Fn(&P) -> f64, poke: impl Fn(&mut P, f64)) -> f64 {
    let mut plus = p.clone();
    poke(&mut plus, STEP);
    let mut minus = p.clone();
    poke(&mut minus, -STEP);
    (loss(&plus) - loss(&minus)) / (2.0 * STEP)
}

fn bump(m: &mut FactorMatrix, r: usize, c: usize, h: f64) {
    let x = m.get(r, c);
    m.set(r, c, x + h);
}

/// Every partial the per-sample CLR update uses, analytic and numeric.
pub fn clr_partials(p: &ClrParams, e: &Entry, lambda: f64) -> Vec<Partial> {
    let rank = p.station.cols();
    let taps = p.kernel.rows();
    let mut g = ClrGradient::new(rank, taps);
    per_sample_gradients(p, e, lambda, &mut g);
    let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
    let loss = |q: &ClrParams| clr_sample_loss(q, e, lambda);
    let mut out = Vec::new();
    let mut push = |name: String, analytic: f64, numeric: f64| {
        out.push(Partial {
            name,
            analytic,
            numeric,
        })
    };
    for r in 0..rank {
        push(
            format!("s[{i}][{r}]"),
            g.station[r],
            central(p, loss, |q, h| bump(&mut q.station, i, r, h)),
        );
        push(
            format!("u[{j}][{r}]"),
            g.parameter[r],
            central(p, loss, |q, h| bump(&mut q.parameter, j, r, h)),
        );
        push(
            format!("v[{k}][{r}]"),
            g.temporal[r],
            central(p, loss, |q, h| bump(&mut q.temporal, k, r, h)),
        );
        for c in 0..taps {
            push(
                format!("w[{c}][{r}]"),
                g.kernel[c * rank + r],
                central(p, loss, |q, h| bump(&mut q.kernel, c, r, h)),
            );
        }
    }
    push(
        format!("a[{i}]"),
        g.station_bias,
        central(p, loss, |q, h| q.station_bias[i] += h),
    );
    push(
        format!("e[{j}]"),
        g.parameter_bias,
        central(p, loss, |q, h| q.parameter_bias[j] += h),
    );
    push(
        format!("o[{k}]"),
        g.slot_bias,
        central(p, loss, |q, h| q.slot_bias[k] += h),
    );
    out
}

pub fn baseline_partials(p: &BiasCpParams, e: &Entry, lambda: f64) -> Vec<Partial> {
    let rank = p.station.cols();
    let mut g = BiasCpGradient::new(rank);
    baseline_gradients(p, e, lambda, &mut g);
    let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
    let loss = |q: &BiasCpParams| baseline_sample_loss(q, e, lambda);
    let mut out = Vec::new();
    for r in 0..rank {
        out.push(Partial {
            name: format!("s[{i}][{r}]"),
            analytic: g.station[r],
            numeric: central(p, loss, |q, h| bump(&mut q.station, i, r, h)),
        });
        out.push(Partial {
            name: format!("u[{j}][{r}]"),
            analytic: g.parameter[r],
            numeric: central(p, loss, |q, h| bump(&mut q.parameter, j, r, h)),
        });
        out.push(Partial {
            name: format!("v[{k}][{r}]"),
            analytic: g.temporal[r],
            numeric: central(p, loss, |q, h| bump(&mut q.temporal, k, r, h)),
        });
    }
    for (name, analytic, numeric) in [
        (
            "a",
            g.station_bias,
            central(p, loss, |q, h| q.station_bias[i] += h),
        ),
        (
            "e",
            g.parameter_bias,
            central(p, loss, |q, h| q.parameter_bias[j] += h),
        ),
        (
            "o",
            g.slot_bias,
            central(p, loss, |q, h| q.slot_bias[k] += h),
        ),
    ] {
        out.push(Partial {
            name: name.into(),
            analytic,
            numeric,
        });
    }
    out
}

/// Outcome of a batch of gradient checks.
#[derive(Debug, Default)]
pub struct GradientSweep {
    pub draws: usize,
    pub partials: usize,
    pub failures: Vec<(usize, usize, Partial)>,
    pub worst_rel: f64,
}

/// `draws` random (params, entry) pairs cycling through every (R, C) pair.
pub fn clr_gradient_sweep(
    seed: u64,
    draws: usize,
    ranks: &[usize],
    taps: &[usize],
) -> GradientSweep {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(4, 3, 9).unwrap();
    let combos: Vec<(usize, usize)> = ranks
        .iter()
        .flat_map(|&r| taps.iter().map(move |&c| (r, c)))
        .collect();
    let mut sweep = GradientSweep::default();
    for n in 0..draws {
        let (rank, c) = combos[n % combos.len()];
        let p = random_clr(&mut rng, dims, rank, c);
        let e = random_entry(&mut rng, dims);
        let lambda = rng.random_range(0.0..0.1);
        sweep.draws += 1;
        for partial in clr_partials(&p, &e, lambda) {
            sweep.partials += 1;
            let diff = (partial.analytic - partial.numeric).abs();
            let scale = partial.analytic.abs().max(partial.numeric.abs());
            if scale > ABS_FLOOR {
                sweep.worst_rel = sweep.worst_rel.max(diff / scale);
            }
            if !partial.ok() {
                sweep.failures.push((rank, c, partial));
            }
        }
    }
    sweep
}

/// Worst relative error of the library convolution against the oracle over
/// `instances` random `(V, W)` pairs, visiting every slot.
pub fn conv_sweep(seed: u64, instances: usize) -> (usize, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let slots = rng.random_range(1..40);
        let rank = rng.random_range(1..6);
        let taps = rng.random_range(1..8);
        let v = uniform_matrix(&mut rng, slots, rank, 2.0);
        let w = uniform_matrix(&mut rng, taps, rank, 2.0);
        for k in 0..slots {
            for r in 0..rank {
                let got = clr_impute::model::causal_conv(&v, &w, k, r);
                let want = conv_oracle(&v, &w, k, r);
                let scale = want.abs().max(f64::MIN_POSITIVE);
                let rel = if got == want {
                    0.0
                } else {
                    (got - want).abs() / scale
                };
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    (checked, worst)
}
