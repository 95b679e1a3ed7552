//! Minimal dense/convolutional layers with explicit forward and backward
//! passes over f64 arrays. Gradients accumulate into the layer's grad
//! buffers; the model flattens parameters for the optimizer and checkpoints.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Xavier-uniform initialization bound for a (fan_in, fan_out) layer.
fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fully connected layer, `y = x W^T + b` over row-major batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>, // (out, in)
    pub b: Array1<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Linear {
        let bound = xavier_bound(in_dim, out_dim);
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
        Linear {
            w,
            b: Array1::zeros(out_dim),
            dw: Array2::zeros((out_dim, in_dim)),
            db: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// x: (batch, in) -> (batch, out)
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates dW, db; returns dx.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.dw = &self.dw + &dy.t().dot(x);
        self.db = &self.db + &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend(self.w.iter());
        out.extend(self.b.iter());
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        out.extend(self.dw.iter());
        out.extend(self.db.iter());
    }

    pub fn read_params(&mut self, cursor: &mut ParamCursor) {
        cursor.fill_array2(&mut self.w);
        cursor.fill_array1(&mut self.b);
    }

    pub fn zero_grads(&mut self) {
        self.dw.fill(0.0);
        self.db.fill(0.0);
    }
}

/// 1-D convolution over (channels, time) items via im2col.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Array2<f64>, // (out_ch, in_ch * k)
    pub b: Array1<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Conv1d {
        let fan_in = in_ch * kernel;
        let bound = xavier_bound(fan_in, out_ch * kernel);
        let w = Array2::from_shape_fn((out_ch, fan_in), |_| rng.gen_range(-bound..bound));
        // Small random bias keeps pre-activations off the exact ReLU
        // boundary that zero-initialized biases can land on (relu-clipped
        // zeros summing with a zero bias).
        let b = Array1::from_shape_fn(out_ch, |_| rng.gen_range(-0.05..0.05));
        Conv1d {
            w,
            b,
            dw: Array2::zeros((out_ch, fan_in)),
            db: Array1::zeros(out_ch),
            in_ch,

            kernel,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, t: usize) -> Option<usize> {
        let padded = t + 2 * self.pad;
        if padded < self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }

    fn im2col(&self, x: &Array2<f64>, t_out: usize) -> Array2<f64> {
        let t_in = x.ncols();
        let mut cols = Array2::zeros((self.in_ch * self.kernel, t_out));
        for c in 0..self.in_ch {
            for j in 0..self.kernel {
                let row = c * self.kernel + j;
                for t in 0..t_out {
                    let src = (t * self.stride + j) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < t_in {
                        cols[(row, t)] = x[(c, src as usize)];
                    }
                }
            }
        }
        cols
    }

    /// x: (in_ch, t) -> (y: (out_ch, t_out), cached im2col matrix)
    pub fn forward_item(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let t_out = self
            .out_len(x.ncols())
            .expect("input shorter than kernel; validated upstream");
        let cols = self.im2col(x, t_out);
        let mut y = self.w.dot(&cols);
        for mut row in y.axis_iter_mut(Axis(0)).zip(self.b.iter()).map(|(r, b)| (r, *b)) {
            row.0.mapv_inplace(|v| v + row.1);
        }
        (y, cols)
    }

    /// Accumulates dW, db; returns dx of shape (in_ch, t_in).
    pub fn backward_item(&mut self, cols: &Array2<f64>, dy: &Array2<f64>, t_in: usize) -> Array2<f64> {
        self.dw = &self.dw + &dy.dot(&cols.t());
        self.db = &self.db + &dy.sum_axis(Axis(1));
        let dcols = self.w.t().dot(dy); // (in_ch*k, t_out)
        let mut dx = Array2::zeros((self.in_ch, t_in));
        let t_out = dy.ncols();
        for c in 0..self.in_ch {
            for j in 0..self.kernel {
                let row = c * self.kernel + j;
                for t in 0..t_out {
                    let src = (t * self.stride + j) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < t_in {
                        dx[(c, src as usize)] += dcols[(row, t)];
                    }
                }
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend(self.w.iter());
        out.extend(self.b.iter());
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        out.extend(self.dw.iter());
        out.extend(self.db.iter());
    }

    pub fn read_params(&mut self, cursor: &mut ParamCursor) {
        cursor.fill_array2(&mut self.w);
        cursor.fill_array1(&mut self.b);
    }

    pub fn zero_grads(&mut self) {
        self.dw.fill(0.0);
        self.db.fill(0.0);
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// dx from dy using the forward output as the mask (y > 0 <=> x > 0).
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Non-overlapping mean pooling over time with window 2; odd tails drop.
pub fn mean_pool2(x: &Array2<f64>) -> Array2<f64> {
    let (c, t) = (x.nrows(), x.ncols());
    let t_out = t / 2;
    Array2::from_shape_fn((c, t_out), |(ci, ti)| {
        0.5 * (x[(ci, 2 * ti)] + x[(ci, 2 * ti + 1)])
    })
}

pub fn mean_pool2_backward(dy: &Array2<f64>, t_in: usize) -> Array2<f64> {
    let (c, t_out) = (dy.nrows(), dy.ncols());
    let mut dx = Array2::zeros((c, t_in));
    for ci in 0..c {
        for ti in 0..t_out {
            dx[(ci, 2 * ti)] = 0.5 * dy[(ci, ti)];
            dx[(ci, 2 * ti + 1)] = 0.5 * dy[(ci, ti)];
        }
    }
    dx
}

pub const STATS_EPS: f64 = 1e-8;

/// Temporal statistics pooling: per-channel mean and standard deviation,
/// concatenated as (mean..., std...).
pub fn stats_pool(x: &Array2<f64>) -> Array1<f64> {
    let (c, t) = (x.nrows(), x.ncols());
    let mut out = Array1::zeros(2 * c);
    for ci in 0..c {
        let row = x.row(ci);
        let mean = row.sum() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        out[ci] = mean;
        out[c + ci] = (var + STATS_EPS).sqrt();
    }
    out
}

pub fn stats_pool_backward(x: &Array2<f64>, dvec: &Array1<f64>) -> Array2<f64> {
    let (c, t) = (x.nrows(), x.ncols());
    let mut dx = Array2::zeros((c, t));
    for ci in 0..c {
        let row = x.row(ci);
        let mean = row.sum() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let std = (var + STATS_EPS).sqrt();
        let dmean = dvec[ci];
        let dstd = dvec[c + ci];
        for ti in 0..t {
            dx[(ci, ti)] = dmean / t as f64 + dstd * (x[(ci, ti)] - mean) / (t as f64 * std);
        }
    }
    dx
}

/// Sequential reader over a flat parameter vector.
pub struct ParamCursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    pub fn new(data: &'a [f64]) -> ParamCursor<'a> {
        ParamCursor { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    pub fn fill_array1(&mut self, a: &mut Array1<f64>) {
        let src = self.take(a.len());
        for (dst, s) in a.iter_mut().zip(src) {
            *dst = *s;
        }
    }

    pub fn fill_array2(&mut self, a: &mut Array2<f64>) {
        let src = self.take(a.len());
        for (dst, s) in a.iter_mut().zip(src) {
            *dst = *s;
        }
    }

    pub fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}
