use rand::Rng;

/// Dense row-major matrix holding one latent vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(FactorMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        FactorMatrix { rows, cols, data }
    }

    /// Entries drawn uniformly from `(0, scale]`.
    pub fn positive_uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| scale * (1.0 - rng.random::<f64>()))
            .collect();
        FactorMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reorders columns: column `c` of the result is column `perm[c]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        FactorMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, perm[c]))
    }
}

pub(crate) fn positive_vec<R: Rng>(len: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| scale * (1.0 - rng.random::<f64>()))
        .collect()
}
