//! Dense row-major observation matrices.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::group::UnitVector;

/// An `n x p` matrix: rows are observations, columns are hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(
                "data matrix must have at least one row and one column",
            ));
        }
        check_dim(rows * cols, data.len())?;
        Ok(DataMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("data matrix must have at least one row"))?;
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim(cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// A single-column matrix holding `x`.
    pub fn from_column(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), 1, x.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column statistics `iota' X_j`.
    pub fn project(&self, iota: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.rows, iota.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &w) in iota.iter().enumerate() {
            for (acc, &x) in out.iter_mut().zip(self.row(i)) {
                *acc += w * x;
            }
        }
        Ok(out)
    }
}

/// Draws `X = n^{1/2} iota mu' + E` with iid standard normal `E` and the
/// canonical `iota = n^{-1/2}(1, ..., 1)'`, so every entry of column `j` has
/// mean `mu_j`.
pub fn generate_data<R: Rng + ?Sized>(n: usize, mu: &[f64], rng: &mut R) -> Result<DataMatrix> {
    if n == 0 || mu.is_empty() {
        return Err(Error::invalid("generate_data needs n >= 1 and p >= 1"));
    }
    let p = mu.len();
    let iota = UnitVector::canonical(n);
    let scale = (n as f64).sqrt();
    let mut x = DataMatrix::zeros(n, p)?;
    let data = x.as_mut_slice();
    for i in 0..n {
        let shift = scale * iota.as_slice()[i];
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            data[i * p + j] = shift * mu[j] + e;
        }
    }
    Ok(x)
}
