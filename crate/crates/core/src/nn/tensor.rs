use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry in each row (first one on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Working matrix for the forward/backward passes. Parameters and public
/// tensors stay `f32`; intermediate activations and gradients are carried in
/// `f64` so that rounding does not swamp small gradient entries.
#[derive(Debug, Clone)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor2) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `x · wᵀ + b` where `w` is `out × in`.
pub(crate) fn affine(x: &Mat, w: &Tensor2, b: &[f32]) -> Mat {
    let (n, d_in) = (x.rows, x.cols);
    let d_out = w.rows();
    debug_assert_eq!(w.cols(), d_in);
    let mut out = Mat::zeros(n, d_out);
    for r in 0..n {
        let xr = x.row(r);
        let orow = out.row_mut(r);
        for (o, slot) in orow.iter_mut().enumerate() {
            let dot: f64 = xr.iter().zip(w.row(o)).map(|(&a, &b)| a * b as f64).sum();
            *slot = b[o] as f64 + dot;
        }
    }
    out
}

/// Gradients of `affine` given the upstream gradient `dy` (`n × out`).
/// Returns `(dw, db, dx)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn affine_backward(x: &Mat, w: &Tensor2, dy: &Mat, need_dx: bool) -> (Vec<f64>, Vec<f64>, Option<Mat>) {
    let (n, d_in) = (x.rows, x.cols);
    let d_out = w.rows();
    let mut dw = vec![0.0f64; d_out * d_in];
    let mut db = vec![0.0f64; d_out];
    for r in 0..n {
        let xr = x.row(r);
        for (o, &g) in dy.row(r).iter().enumerate() {
            db[o] += g;
            if g != 0.0 {
                for (acc, &xv) in dw[o * d_in..(o + 1) * d_in].iter_mut().zip(xr) {
                    *acc += g * xv;
                }
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = Mat::zeros(n, d_in);
        for r in 0..n {
            let dyr = dy.row(r);
            let dxr = dx.row_mut(r);
            for (o, &g) in dyr.iter().enumerate() {
                if g != 0.0 {
                    for (a, &wv) in dxr.iter_mut().zip(w.row(o)) {
                        *a += g * wv as f64;
                    }
                }
            }
        }
        dx
    });
    (dw, db, dx)
}
