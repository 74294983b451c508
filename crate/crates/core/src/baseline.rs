//! Biased CP baseline: `x̃ = Σ_r s_ir u_jr v_kr + a_i + e_j + o_k`, no
//! temporal convolution and no output sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::factor::{positive_vec, FactorMatrix};
use crate::model::{ModelError, INIT_SCALE};
use crate::sgd::{Diverged, SgdModel};
use crate::split::HeldOut;
use crate::tensor::{Dims, Entry, EntryIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCpParams {
    pub station: FactorMatrix,
    pub parameter: FactorMatrix,
    pub temporal: FactorMatrix,
    pub station_bias: Vec<f64>,
    pub parameter_bias: Vec<f64>,
    pub slot_bias: Vec<f64>,
}

impl BiasCpParams {
    pub fn zeros(dims: Dims, rank: usize) -> Result<Self, ModelError> {
        if rank == 0 {
            return Err(ModelError::ZeroRank);
        }
        Ok(BiasCpParams {
            station: FactorMatrix::zeros(dims.stations, rank),
            parameter: FactorMatrix::zeros(dims.parameters, rank),
            temporal: FactorMatrix::zeros(dims.slots, rank),
            station_bias: vec![0.0; dims.stations],
            parameter_bias: vec![0.0; dims.parameters],
            slot_bias: vec![0.0; dims.slots],
        })
    }

    pub fn init_positive(dims: Dims, rank: usize, seed: u64) -> Result<Self, ModelError> {
        if rank == 0 {
            return Err(ModelError::ZeroRank);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(BiasCpParams {
            station: FactorMatrix::positive_uniform(dims.stations, rank, INIT_SCALE, &mut rng),
            parameter: FactorMatrix::positive_uniform(dims.parameters, rank, INIT_SCALE, &mut rng),
            temporal: FactorMatrix::positive_uniform(dims.slots, rank, INIT_SCALE, &mut rng),
            station_bias: positive_vec(dims.stations, INIT_SCALE, &mut rng),
            parameter_bias: positive_vec(dims.parameters, INIT_SCALE, &mut rng),
            slot_bias: positive_vec(dims.slots, INIT_SCALE, &mut rng),
        })
    }

    pub fn from_parts(
        station: FactorMatrix,
        parameter: FactorMatrix,
        temporal: FactorMatrix,
        station_bias: Vec<f64>,
        parameter_bias: Vec<f64>,
        slot_bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let rank = station.cols();
        if rank == 0 {
            return Err(ModelError::ZeroRank);
        }
        if parameter.cols() != rank || temporal.cols() != rank {
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
        Ok(BiasCpParams {
            station,
            parameter,
            temporal,
            station_bias,
            parameter_bias,
            slot_bias,
        })
    }

    pub fn rank(&self) -> usize {
        self.station.cols()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            stations: self.station.rows(),
            parameters: self.parameter.rows(),
            slots: self.temporal.rows(),
        }
    }

    pub fn predict_linear(&self, idx: EntryIndex) -> f64 {
        let s = self.station.row(idx.i);
        let u = self.parameter.row(idx.j);
        let v = self.temporal.row(idx.k);
        let mut acc = 0.0;
        for r in 0..s.len() {
            acc += s[r] * u[r] * v[r];
        }
        acc + self.station_bias[idx.i] + self.parameter_bias[idx.j] + self.slot_bias[idx.k]
    }

    /// Half squared error plus the per-entry L2 penalty.
    pub fn objective(&self, entries: &[Entry], lambda: f64) -> f64 {
        let sq = |m: &FactorMatrix, i: usize| m.row(i).iter().map(|x| x * x).sum::<f64>();
        let mut err = 0.0;
        let mut reg = 0.0;
        for e in entries {
            let (i, j, k) = (e.idx.i, e.idx.j, e.idx.k);
            let d = e.value - self.predict_linear(e.idx);
            err += d * d;
            reg += sq(&self.station, i)
                + sq(&self.parameter, j)
                + sq(&self.temporal, k)
                + self.station_bias[i].powi(2)
                + self.parameter_bias[j].powi(2)
                + self.slot_bias[k].powi(2);
        }
        0.5 * err + 0.5 * lambda * reg
    }

    pub fn is_finite(&self) -> bool {
        self.station.is_finite()
            && self.parameter.is_finite()
            && self.temporal.is_finite()
            && [&self.station_bias, &self.parameter_bias, &self.slot_bias]
                .iter()
                .all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCpGradient {
    pub station: Vec<f64>,
    pub parameter: Vec<f64>,
    pub temporal: Vec<f64>,
    pub station_bias: f64,
    pub parameter_bias: f64,
    pub slot_bias: f64,
}

impl BiasCpGradient {
    pub fn new(rank: usize) -> Self {
        BiasCpGradient {
            station: vec![0.0; rank],
            parameter: vec![0.0; rank],
            temporal: vec![0.0; rank],
            station_bias: 0.0,
            parameter_bias: 0.0,
            slot_bias: 0.0,
        }
    }
}

pub fn baseline_gradients(
    params: &BiasCpParams,
    entry: &Entry,
    lambda: f64,
    g: &mut BiasCpGradient,
) {
    let (i, j, k) = (entry.idx.i, entry.idx.j, entry.idx.k);
    let s = params.station.row(i);
    let u = params.parameter.row(j);
    let v = params.temporal.row(k);
    let residual = entry.value - params.predict_linear(entry.idx);
    for r in 0..s.len() {
        g.station[r] = -residual * u[r] * v[r] + lambda * s[r];
        g.parameter[r] = -residual * s[r] * v[r] + lambda * u[r];
        g.temporal[r] = -residual * s[r] * u[r] + lambda * v[r];
    }
    g.station_bias = -residual + lambda * params.station_bias[i];
    g.parameter_bias = -residual + lambda * params.parameter_bias[j];
    g.slot_bias = -residual + lambda * params.slot_bias[k];
}

impl SgdModel for BiasCpParams {
    type Scratch = BiasCpGradient;

    fn scratch(&self) -> BiasCpGradient {
        BiasCpGradient::new(self.rank())
    }

    fn sgd_update(
        &mut self,
        g: &mut BiasCpGradient,
        entry: &Entry,
        eta: f64,
        lambda: f64,
    ) -> Result<(), Diverged> {
        baseline_gradients(self, entry, lambda, g);
        let (i, j, k) = (entry.idx.i, entry.idx.j, entry.idx.k);
        let mut finite = true;
        let mut step = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= eta * s;
                finite &= d.is_finite();
            }
        };
        step(self.station.row_mut(i), &g.station);
        step(self.parameter.row_mut(j), &g.parameter);
        step(self.temporal.row_mut(k), &g.temporal);
        step(
            std::slice::from_mut(&mut self.station_bias[i]),
            &[g.station_bias],
        );
        step(
            std::slice::from_mut(&mut self.parameter_bias[j]),
            &[g.parameter_bias],
        );
        step(std::slice::from_mut(&mut self.slot_bias[k]), &[g.slot_bias]);
        if finite {
            Ok(())
        } else {
            Err(Diverged)
        }
    }

    fn objective(&self, entries: &[Entry], lambda: f64) -> f64 {
        BiasCpParams::objective(self, entries, lambda)
    }

    fn score_pairs(&self, held: &[HeldOut]) -> Vec<(f64, f64)> {
        held.iter()
            .map(|h| (h.target, self.predict_linear(h.idx)))
            .collect()
    }

    fn is_finite(&self) -> bool {
        BiasCpParams::is_finite(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgd::sgd_epoch;

    fn dims(i: usize, j: usize, k: usize) -> Dims {
        Dims::new(i, j, k).unwrap()
    }

    #[test]
    fn linear_predictions() {
        let zero = BiasCpParams::zeros(dims(2, 2, 2), 3).unwrap();
        assert_eq!(zero.predict_linear(EntryIndex::new(1, 1, 1)), 0.0);

        let ones = BiasCpParams::from_parts(
            FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        assert_eq!(ones.predict_linear(EntryIndex::new(0, 0, 0)), 1.0);

        // R=2: (2·3·0.5) + (−1·0.5·4) + 0.1 + 0.2 + 0.3 = 3 − 2 + 0.6
        let p = BiasCpParams::from_parts(
            FactorMatrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap(),
            FactorMatrix::from_vec(1, 2, vec![3.0, 0.5]).unwrap(),
            FactorMatrix::from_vec(1, 2, vec![0.5, 4.0]).unwrap(),
            vec![0.1],
            vec![0.2],
            vec![0.3],
        )
        .unwrap();
        assert!((p.predict_linear(EntryIndex::new(0, 0, 0)) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let p0 = BiasCpParams::init_positive(dims(2, 3, 4), 2, 5).unwrap();
        let mut p = p0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sgd_epoch(&mut p, &[Entry::new(1, 2, 3, 4.0)], 0.0, 0.1, &mut rng).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn rejects_mismatched_parts() {
        let err = BiasCpParams::from_parts(
            FactorMatrix::zeros(2, 2),
            FactorMatrix::zeros(2, 3),
            FactorMatrix::zeros(2, 2),
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 2],
        );
        assert!(matches!(err, Err(ModelError::Shape(_))));
    }
}
