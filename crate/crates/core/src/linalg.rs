//! Dense row-major matrices and the handful of vector kernels the crate needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `out += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    out.iter_mut().zip(x).for_each(|(o, v)| *o += alpha * v);
}

/// `out = W x + b` for a row-major `W` of shape `out.len() x x.len()`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), out.len() * n_in);
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&w[r * n_in..(r + 1) * n_in], x);
    }
}

/// Accumulates the gradients of `y = W x + b` given `dy`:
/// `dW += dy x^T`, `db += dy`, and `dx += W^T dy` when `dx` is given.
pub fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        axpy(g, x, &mut dw[r * n_in..(r + 1) * n_in]);
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &w[r * n_in..(r + 1) * n_in], dx);
        }
    }
}

pub fn mean_of<'a, I>(rows: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for r in rows {
        axpy(1.0, r, &mut acc);
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
    }
    acc
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `log softmax(logits)[target]`, computed stably.
pub fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    (logits[target] - max) - sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_backward_agree_on_a_small_case() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5, -0.5];
        let x = [1.0, 0.0, -1.0];
        let mut y = [0.0; 2];
        affine(&w, &b, &x, &mut y);
        assert_eq!(y, [-1.5, -2.5]);

        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let mut dx = [0.0; 3];
        affine_backward(&w, &x, &[1.0, 1.0], &mut dw, &mut db, Some(&mut dx));
        assert_eq!(dw, [1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(db, [1.0, 1.0]);
        assert_eq!(dx, [5.0, 7.0, 9.0]);
    }

    #[test]
    fn single_logit_has_zero_log_probability() {
        assert_eq!(log_softmax_at(&[3.7], 0), 0.0);
        assert_eq!(softmax(&[-12.0]), vec![1.0]);
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
