//! Synthetic tensors with planted low-rank, bias and temporal structure.
//!
//! Values follow `x = sigmoid(Σ_r s_ir u_jr sigmoid(z_kr) + a_i + e_j + o_k) + noise`
//! where each temporal column `z_r` is either i.i.d. or a stationary AR(1)
//! series. With an identity kernel this is exactly the CLR model form.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::factor::FactorMatrix;
use crate::model::sigmoid;
use crate::tensor::{Dims, Entry, EntryIndex, SparseTensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemporalMode {
    Iid,
    /// `z_k = ρ z_{k−1} + sqrt(1 − ρ²) ξ_k`, unit stationary variance.
    SmoothAr {
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dims: Dims,
    pub rank: usize,
    pub temporal: TemporalMode,
    pub noise_sigma: f64,
    pub observed_fraction: f64,
    /// Standard deviation of the station and parameter factors.
    pub factor_scale: f64,
    /// Standard deviation of the station and parameter biases.
    pub bias_scale: f64,
    /// Standard deviation of the per-slot biases.
    pub slot_bias_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: Dims, rank: usize, temporal: TemporalMode, seed: u64) -> Self {
        SynthSpec {
            dims,
            rank,
            temporal,
            noise_sigma: 0.0,
            observed_fraction: 1.0,
            factor_scale: 1.0,
            bias_scale: 0.5,
            slot_bias_scale: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rank == 0 {
            return Err("planted rank must be at least 1".into());
        }
        if let TemporalMode::SmoothAr { rho } = self.temporal {
            if !(0.0..1.0).contains(&rho) {
                return Err(format!("AR coefficient must lie in [0, 1), got {rho}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return Err(format!(
                "observed fraction must lie in (0, 1], got {}",
                self.observed_fraction
            ));
        }
        if self.observed_fraction * (self.dims.cells() as f64) < 100.0 {
            return Err("fewer than 100 observed cells requested".into());
        }
        if !(self.factor_scale >= 0.0 && self.bias_scale >= 0.0 && self.slot_bias_scale >= 0.0) {
            return Err("scales must be non-negative".into());
        }
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        (self.observed_fraction * self.dims.cells() as f64).round() as usize
    }
}

/// Planted factors and the noiseless dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dims: Dims,
    pub station: FactorMatrix,
    pub parameter: FactorMatrix,
    /// Latent temporal series `z` before the sigmoid.
    pub temporal: FactorMatrix,
    pub station_bias: Vec<f64>,
    pub parameter_bias: Vec<f64>,
    pub slot_bias: Vec<f64>,
    values: Vec<f64>,
}

impl GroundTruth {
    fn offset(&self, idx: EntryIndex) -> usize {
        (idx.i * self.dims.parameters + idx.j) * self.dims.slots + idx.k
    }

    pub fn value(&self, idx: EntryIndex) -> f64 {
        self.values[self.offset(idx)]
    }

    /// Writes every cell as `i,j,k,value`.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,k,value")?;
        for i in 0..self.dims.stations {
            for j in 0..self.dims.parameters {
                for k in 0..self.dims.slots {
                    let v = self.value(EntryIndex::new(i, j, k));
                    writeln!(out, "{i},{j},{k},{v}")?;
                }
            }
        }
        out.flush()
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("standard deviation is finite and non-negative")
}

pub fn generate(spec: &SynthSpec) -> Result<(SparseTensor, GroundTruth), String> {
    spec.validate()?;
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fac = normal(spec.factor_scale);
    let bias = normal(spec.bias_scale);
    let slot_bias = normal(spec.slot_bias_scale);
    let unit = normal(1.0);

    let station = FactorMatrix::from_fn(d.stations, spec.rank, |_, _| fac.sample(&mut rng));
    let parameter = FactorMatrix::from_fn(d.parameters, spec.rank, |_, _| fac.sample(&mut rng));
    let mut temporal = FactorMatrix::zeros(d.slots, spec.rank);
    for r in 0..spec.rank {
        let mut prev = unit.sample(&mut rng);
        temporal.set(0, r, prev);
        for k in 1..d.slots {
            let z = match spec.temporal {
                TemporalMode::Iid => unit.sample(&mut rng),
                TemporalMode::SmoothAr { rho } => {
                    rho * prev + (1.0 - rho * rho).sqrt() * unit.sample(&mut rng)
                }
            };
            temporal.set(k, r, z);
            prev = z;
        }
    }
    let station_bias: Vec<f64> = (0..d.stations).map(|_| bias.sample(&mut rng)).collect();
    let parameter_bias: Vec<f64> = (0..d.parameters).map(|_| bias.sample(&mut rng)).collect();
    let slot_bias: Vec<f64> = (0..d.slots).map(|_| slot_bias.sample(&mut rng)).collect();

    let activated = FactorMatrix::from_fn(d.slots, spec.rank, |k, r| sigmoid(temporal.get(k, r)));
    let mut values = Vec::with_capacity(d.cells() as usize);
    for i in 0..d.stations {
        for j in 0..d.parameters {
            for k in 0..d.slots {
                let (s, u, v) = (station.row(i), parameter.row(j), activated.row(k));
                let mut z = station_bias[i] + parameter_bias[j] + slot_bias[k];
                for r in 0..spec.rank {
                    z += s[r] * u[r] * v[r];
                }
                values.push(sigmoid(z));
            }
        }
    }
    let truth = GroundTruth {
        dims: d,
        station,
        parameter,
        temporal,
        station_bias,
        parameter_bias,
        slot_bias,
        values,
    };

    let cells = truth.values.len();
    let mut chosen = rand::seq::index::sample(&mut rng, cells, spec.observed_count()).into_vec();
    chosen.sort_unstable();
    let noise = normal(spec.noise_sigma);
    let entries = chosen
        .into_iter()
        .map(|n| {
            let k = n % d.slots;
            let j = (n / d.slots) % d.parameters;
            let i = n / (d.slots * d.parameters);
            let x = truth.values[n] + noise.sample(&mut rng);
            Entry::new(i, j, k, x)
        })
        .collect();
    let tensor = SparseTensor::from_entries(d, entries).map_err(|e: TensorError| e.to_string())?;
    Ok((tensor, truth))
}

/// Sample lag-1 autocorrelation of a series.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}
