//! The CLR model: biased CP factorization whose temporal factors pass
//! through a causal convolution and a sigmoid before entering the
//! rank-one sum, with a sigmoid on the final estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::factor::{positive_vec, FactorMatrix};
use crate::tensor::{Dims, Entry, EntryIndex};

pub const DEFAULT_RANK: usize = 10;
pub const DEFAULT_KERNEL: usize = 3;
/// Upper end of the positive uniform initialization range `(0, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("kernel length must be at least 1")]
    ZeroKernel,
    #[error("parameter shapes are inconsistent: {0}")]
    Shape(String),
}

/// Logistic function, evaluated without overflow for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// Causally convolved temporal feature `v̄[k][r] = Σ_c v[k-c][r] · w[c][r]`
/// (taps 0-based), with rows before time 0 treated as zero.
#[inline]
pub fn causal_conv(v: &FactorMatrix, w: &FactorMatrix, k: usize, r: usize) -> f64 {
    let taps = w.rows().min(k + 1);
    let mut acc = 0.0;
    for c in 0..taps {
        acc += v.get(k - c, r) * w.get(c, r);
    }
    acc
}

/// Output of the model for one cell; always inside `(0, 1)` up to
/// floating-point saturation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Prediction(pub f64);

impl Prediction {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// All learnable state of one CLR model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrParams {
    /// `|I| × R` station factors.
    pub station: FactorMatrix,
    /// `|J| × R` parameter factors.
    pub parameter: FactorMatrix,
    /// `|K| × R` raw temporal factors.
    pub temporal: FactorMatrix,
    /// `C × R` causal kernel; row `c` is tap `c` (row 0 multiplies time `k`).
    pub kernel: FactorMatrix,
    pub station_bias: Vec<f64>,
    pub parameter_bias: Vec<f64>,
    pub slot_bias: Vec<f64>,
}

impl ClrParams {
    pub fn zeros(dims: Dims, rank: usize, kernel_len: usize) -> Result<Self, ModelError> {
        check_sizes(rank, kernel_len)?;
        Ok(ClrParams {
            station: FactorMatrix::zeros(dims.stations, rank),
            parameter: FactorMatrix::zeros(dims.parameters, rank),
            temporal: FactorMatrix::zeros(dims.slots, rank),
            kernel: FactorMatrix::zeros(kernel_len, rank),
            station_bias: vec![0.0; dims.stations],
            parameter_bias: vec![0.0; dims.parameters],
            slot_bias: vec![0.0; dims.slots],
        })
    }

    /// Seeded initialization with every parameter drawn from `(0, 0.05]`.
    pub fn init_positive(
        dims: Dims,
        rank: usize,
        kernel_len: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        check_sizes(rank, kernel_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let station = FactorMatrix::positive_uniform(dims.stations, rank, INIT_SCALE, &mut rng);
        let parameter = FactorMatrix::positive_uniform(dims.parameters, rank, INIT_SCALE, &mut rng);
        let temporal = FactorMatrix::positive_uniform(dims.slots, rank, INIT_SCALE, &mut rng);
        let kernel = FactorMatrix::positive_uniform(kernel_len, rank, INIT_SCALE, &mut rng);
        Ok(ClrParams {
            station,
            parameter,
            temporal,
            kernel,
            station_bias: positive_vec(dims.stations, INIT_SCALE, &mut rng),
            parameter_bias: positive_vec(dims.parameters, INIT_SCALE, &mut rng),
            slot_bias: positive_vec(dims.slots, INIT_SCALE, &mut rng),
        })
    }

    /// Assembles parameters from parts, checking that every shape agrees.
    pub fn from_parts(
        station: FactorMatrix,
        parameter: FactorMatrix,
        temporal: FactorMatrix,
        kernel: FactorMatrix,
        station_bias: Vec<f64>,
        parameter_bias: Vec<f64>,
        slot_bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let rank = station.cols();
        check_sizes(rank, kernel.rows())?;
        if parameter.cols() != rank || temporal.cols() != rank || kernel.cols() != rank {
            return Err(ModelError::Shape("factor ranks differ".into()));
        }
        if station_bias.len() != station.rows()
            || parameter_bias.len() != parameter.rows()
            || slot_bias.len() != temporal.rows()
        {
            return Err(ModelError::Shape(
                "bias lengths differ from factor rows".into(),
            ));
        }
        Ok(ClrParams {
            station,
            parameter,
            temporal,
            kernel,
            station_bias,
            parameter_bias,
            slot_bias,
        })
    }

    pub fn rank(&self) -> usize {
        self.station.cols()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.rows()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            stations: self.station.rows(),
            parameters: self.parameter.rows(),
            slots: self.temporal.rows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.station.is_finite()
            && self.parameter.is_finite()
            && self.temporal.is_finite()
            && self.kernel.is_finite()
            && [&self.station_bias, &self.parameter_bias, &self.slot_bias]
                .iter()
                .all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn causal_conv(&self, k: usize, r: usize) -> f64 {
        causal_conv(&self.temporal, &self.kernel, k, r)
    }

    /// `ṽ[k][r] = sigmoid(v̄[k][r])`.
    pub fn activated_temporal(&self, k: usize, r: usize) -> f64 {
        sigmoid(self.causal_conv(k, r))
    }

    /// Pre-activation of the final sigmoid.
    pub fn logit(&self, idx: EntryIndex) -> f64 {
        let s = self.station.row(idx.i);
        let u = self.parameter.row(idx.j);
        let mut acc = 0.0;
        for r in 0..self.rank() {
            acc += s[r] * u[r] * self.activated_temporal(idx.k, r);
        }
        acc + self.station_bias[idx.i] + self.parameter_bias[idx.j] + self.slot_bias[idx.k]
    }

    pub fn predict(&self, idx: EntryIndex) -> Prediction {
        Prediction(sigmoid(self.logit(idx)))
    }

    /// Precomputes `ṽ` for every time slot so many cells can be scored
    /// cheaply while the parameters stay fixed.
    pub fn predictor(&self) -> ClrPredictor<'_> {
        let (k_len, rank) = (self.temporal.rows(), self.rank());
        let activated = FactorMatrix::from_fn(k_len, rank, |k, r| self.activated_temporal(k, r));
        ClrPredictor {
            params: self,
            activated,
        }
    }

    /// Training objective: half the squared error over `entries` plus the
    /// L2 penalty, where the penalty of every parameter touched by an entry
    /// is counted once per entry.
    pub fn objective(&self, entries: &[Entry], lambda: f64) -> f64 {
        let predictor = self.predictor();
        let row_sq = |m: &FactorMatrix| -> Vec<f64> {
            (0..m.rows())
                .map(|i| m.row(i).iter().map(|x| x * x).sum())
                .collect()
        };
        let s_sq = row_sq(&self.station);
        let u_sq = row_sq(&self.parameter);
        let v_sq = row_sq(&self.temporal);
        let w_sq: f64 = self.kernel.as_slice().iter().map(|x| x * x).sum();

        let mut err = 0.0;
        let mut reg = 0.0;
        for e in entries {
            let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
            let d = e.value - predictor.predict(e.idx).0;
            err += d * d;
            reg += s_sq[i]
                + u_sq[j]
                + v_sq[k]
                + w_sq
                + self.station_bias[i].powi(2)
                + self.parameter_bias[j].powi(2)
                + self.slot_bias[k].powi(2);
        }
        0.5 * err + 0.5 * lambda * reg
    }

    /// Applies the same column permutation to S, U, V and W.
    pub fn permute_rank(&self, perm: &[usize]) -> ClrParams {
        ClrParams {
            station: self.station.permute_columns(perm),
            parameter: self.parameter.permute_columns(perm),
            temporal: self.temporal.permute_columns(perm),
            kernel: self.kernel.permute_columns(perm),
            ..self.clone()
        }
    }
}

fn check_sizes(rank: usize, kernel_len: usize) -> Result<(), ModelError> {
    if rank == 0 {
        return Err(ModelError::ZeroRank);
    }
    if kernel_len == 0 {
        return Err(ModelError::ZeroKernel);
    }
    Ok(())
}

/// Read-only scorer with cached activated temporal features.
pub struct ClrPredictor<'a> {
    params: &'a ClrParams,
    activated: FactorMatrix,
}

impl ClrPredictor<'_> {
    #[inline]
    pub fn predict(&self, idx: EntryIndex) -> Prediction {
        let p = self.params;
        let s = p.station.row(idx.i);
        let u = p.parameter.row(idx.j);
        let v = self.activated.row(idx.k);
        let mut acc = 0.0;
        for r in 0..s.len() {
            acc += s[r] * u[r] * v[r];
        }
        acc += p.station_bias[idx.i] + p.parameter_bias[idx.j] + p.slot_bias[idx.k];
        Prediction(sigmoid(acc))
    }
}
