//! RMSE / MAE over `(truth, prediction)` pairs and multi-run aggregation.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("no entries to score")]
    Empty,
    #[error("non-finite value in pair {0}")]
    NonFinite(usize),
}

fn check(pairs: &[(f64, f64)]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    match pairs
        .iter()
        .position(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        Some(n) => Err(MetricError::NonFinite(n)),
        None => Ok(()),
    }
}

pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    check(pairs)?;
    let sq: f64 = pairs.iter().map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

pub fn mae(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    check(pairs)?;
    let abs: f64 = pairs.iter().map(|(x, y)| (x - y).abs()).sum();
    Ok(abs / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

impl RunMetrics {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, MetricError> {
        Ok(RunMetrics {
            rmse: rmse(pairs)?,
            mae: mae(pairs)?,
            n: pairs.len(),
        })
    }
}

/// Per-run metrics plus their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub runs: Vec<RunMetrics>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
}

impl MetricReport {
    /// Sample standard deviation of the per-run RMSE (0 for a single run).
    pub fn rmse_std(&self) -> f64 {
        sample_std(self.runs.iter().map(|r| r.rmse), self.mean_rmse)
    }

    pub fn mae_std(&self) -> f64 {
        sample_std(self.runs.iter().map(|r| r.mae), self.mean_mae)
    }
}

fn sample_std(xs: impl ExactSizeIterator<Item = f64>, mean: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

pub fn multi_run(runs: &[RunMetrics]) -> Result<MetricReport, MetricError> {
    if runs.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = runs.len() as f64;
    Ok(MetricReport {
        runs: runs.to_vec(),
        mean_rmse: runs.iter().map(|r| r.rmse).sum::<f64>() / n,
        mean_mae: runs.iter().map(|r| r.mae).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let same = [(0.3, 0.3), (0.7, 0.7)];
        assert_eq!(rmse(&same), Ok(0.0));
        assert_eq!(mae(&same), Ok(0.0));

        let flip = [(0.0, 1.0), (1.0, 0.0)];
        assert_eq!(rmse(&flip), Ok(1.0));
        assert_eq!(mae(&flip), Ok(1.0));

        let p = [(0.2, 0.25), (0.4, 0.3)];
        assert!((rmse(&p).unwrap() - 0.079_056_941_504_209_48).abs() < 1e-12);
        assert!((mae(&p).unwrap() - 0.075).abs() < 1e-12);
    }

    #[test]
    fn empty_and_non_finite() {
        assert_eq!(rmse(&[]), Err(MetricError::Empty));
        assert_eq!(mae(&[]), Err(MetricError::Empty));
        assert_eq!(
            rmse(&[(0.0, 0.0), (f64::NAN, 1.0)]),
            Err(MetricError::NonFinite(1))
        );
    }

    #[test]
    fn multi_run_means() {
        let r = |x| RunMetrics {
            rmse: x,
            mae: x / 2.0,
            n: 10,
        };
        let one = multi_run(&[r(0.04)]).unwrap();
        assert_eq!(one.mean_rmse, 0.04);
        assert_eq!(one.rmse_std(), 0.0);
        let two = multi_run(&[r(0.02), r(0.03)]).unwrap();
        assert!((two.mean_rmse - 0.025).abs() < 1e-15);
        assert_eq!(two.runs.len(), 2);
        assert!(multi_run(&[]).is_err());
    }

    fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..60)
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(p in pairs()) {
            prop_assert!(mae(&p).unwrap() <= rmse(&p).unwrap() * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn permutation_invariant(p in pairs(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut q = p.clone();
            q.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((rmse(&p).unwrap() - rmse(&q).unwrap()).abs() < 1e-12);
            prop_assert!((mae(&p).unwrap() - mae(&q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn residual_scaling(p in pairs(), alpha in -5.0..5.0f64) {
            let scaled: Vec<_> = p.iter().map(|(x, y)| (alpha * x, alpha * y)).collect();
            let want = alpha.abs() * rmse(&p).unwrap();
            prop_assert!((rmse(&scaled).unwrap() - want).abs() <= 1e-12 * (1.0 + want));
        }
    }
}
