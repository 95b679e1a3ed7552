//! Reference front-end encoders.
//!
//! `ConvFbankEncoder`: a small residual 1-D convolution stack over log-FBank
//! frames with temporal statistics pooling. `RawEncoder`: a learnable
//! parametric band-pass filterbank over raw samples (sinc kernels with
//! trainable cutoffs), log-energy compression, then the same residual stack.
//! Only the input/output contracts are normative; depths are sized for
//! CPU-scale runs.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{
    mean_pool2, mean_pool2_backward, relu, relu_backward, stats_pool, stats_pool_backward,
    Conv1d, Linear, ParamCursor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoderConfig {
    pub mel_bins: usize,
    pub channels: usize,
    pub blocks: usize,
    pub in_kernel: usize,
    pub block_kernel: usize,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        ConvEncoderConfig {
            mel_bins: 80,
            channels: 24,
            blocks: 2,
            in_kernel: 5,
            block_kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEncoderConfig {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub blocks: usize,
    pub block_kernel: usize,
    pub min_low_hz: f64,
    pub min_band_hz: f64,
}

impl Default for RawEncoderConfig {
    fn default() -> Self {
        RawEncoderConfig {
            filters: 24,
            kernel: 129,
            stride: 64,
            blocks: 2,
            block_kernel: 3,
            min_low_hz: 30.0,
            min_band_hz: 50.0,
        }
    }
}

/// Residual unit: `y = relu(x + c2(relu(c1(x))))`, channel-preserving.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub c1: Conv1d,
    pub c2: Conv1d,
}

pub struct ResBlockCache {
    cols1: Array2<f64>,
    v: Array2<f64>, // relu(c1(x))
    cols2: Array2<f64>,
    y: Array2<f64>, // block output (post-relu)
    t_in: usize,
}

impl ResBlock {
    fn new(channels: usize, kernel: usize, rng: &mut impl Rng) -> ResBlock {
        let pad = kernel / 2;
        ResBlock {
            c1: Conv1d::new(channels, channels, kernel, 1, pad, rng),
            c2: Conv1d::new(channels, channels, kernel, 1, pad, rng),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ResBlockCache) {
        let (u, cols1) = self.c1.forward_item(x);
        let v = relu(&u);
        let (w, cols2) = self.c2.forward_item(&v);
        let s = x + &w;
        let y = relu(&s);
        let cache = ResBlockCache {
            cols1,
            v,
            cols2,
            y: y.clone(),
            t_in: x.ncols(),
        };
        (y, cache)
    }

    fn backward(&mut self, cache: &ResBlockCache, dy: &Array2<f64>) -> Array2<f64> {
        let ds = relu_backward(&cache.y, dy);
        let dv = self.c2.backward_item(&cache.cols2, &ds, cache.v.ncols());
        let du = relu_backward(&cache.v, &dv);
        let dx_main = self.c1.backward_item(&cache.cols1, &du, cache.t_in);
        dx_main + &ds
    }

    fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count()
    }

    fn append_params(&self, out: &mut Vec<f64>) {
        self.c1.append_params(out);
        self.c2.append_params(out);
    }

    fn append_grads(&self, out: &mut Vec<f64>) {
        self.c1.append_grads(out);
        self.c2.append_grads(out);
    }

    fn read_params(&mut self, cursor: &mut ParamCursor) {
        self.c1.read_params(cursor);
        self.c2.read_params(cursor);
    }

    fn zero_grads(&mut self) {
        self.c1.zero_grads();
        self.c2.zero_grads();
    }
}

/// Shared tail: pool -> blocks (pooling between them) -> stats -> projection.
#[derive(Debug, Clone)]
struct ResidualTail {
    blocks: Vec<ResBlock>,
    proj: Linear,
}

struct TailItemCache {
    pre_pool_len: usize,
    block_caches: Vec<(usize, ResBlockCache)>, // (input len before optional pool, cache)
    pre_stats: Array2<f64>,
}

struct TailCache {
    items: Vec<TailItemCache>,
    stats: Array2<f64>, // (batch, 2*channels)
}

impl ResidualTail {
    fn new(channels: usize, blocks: usize, kernel: usize, emb_dim: usize, rng: &mut impl Rng) -> ResidualTail {
        ResidualTail {
            blocks: (0..blocks).map(|_| ResBlock::new(channels, kernel, rng)).collect(),
            proj: Linear::new(2 * channels, emb_dim, rng),
        }
    }

    /// Minimum input frames so every pooling stage keeps at least 2 frames.
    fn min_frames(&self) -> usize {
        2usize.pow(self.blocks.len() as u32) * 2
    }

    fn forward(&self, items: &[Array2<f64>]) -> (Array2<f64>, TailCache) {
        let mut caches = Vec::with_capacity(items.len());
        let mut stats = Array2::zeros((items.len(), self.proj.in_dim()));
        for (i, x) in items.iter().enumerate() {
            let pre_pool_len = x.ncols();
            let mut h = mean_pool2(x);
            let mut block_caches = Vec::with_capacity(self.blocks.len());
            for (bi, block) in self.blocks.iter().enumerate() {
                let before = h.ncols();
                let (out, cache) = block.forward(&h);
                h = if bi + 1 < self.blocks.len() {
                    mean_pool2(&out)
                } else {
                    out
                };
                block_caches.push((before, cache));
            }
            let s = stats_pool(&h);
            stats.row_mut(i).assign(&s);
            caches.push(TailItemCache {
                pre_pool_len,
                block_caches,
                pre_stats: h,
            });
        }
        let emb = self.proj.forward(&stats);
        (emb, TailCache { items: caches, stats })
    }

    /// Returns per-item gradients w.r.t. the tail input.
    fn backward(&mut self, cache: &TailCache, d_emb: &Array2<f64>) -> Vec<Array2<f64>> {
        let d_stats = self.proj.backward(&cache.stats, d_emb);
        let n_blocks = self.blocks.len();
        let mut dx_items = Vec::with_capacity(cache.items.len());
        for (i, item) in cache.items.iter().enumerate() {
            let ds = d_stats.row(i).to_owned();
            let mut dh = stats_pool_backward(&item.pre_stats, &ds);
            for (bi, block) in self.blocks.iter_mut().enumerate().rev() {
                let (before, bcache) = &item.block_caches[bi];
                if bi + 1 < n_blocks {
                    dh = mean_pool2_backward(&dh, bcache.y.ncols());
                }
                dh = block.backward(bcache, &dh);
                debug_assert_eq!(dh.ncols(), *before);
            }
            dx_items.push(mean_pool2_backward(&dh, item.pre_pool_len));
        }
        dx_items
    }

    fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum::<usize>() + self.proj.param_count()
    }

    fn append_params(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.append_params(out);
        }
        self.proj.append_params(out);
    }

    fn append_grads(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.append_grads(out);
        }
        self.proj.append_grads(out);
    }

    fn read_params(&mut self, cursor: &mut ParamCursor) {
        for b in &mut self.blocks {
            b.read_params(cursor);
        }
        self.proj.read_params(cursor);
    }

    fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.zero_grads();
        }
        self.proj.zero_grads();
    }
}

/// Residual convolution encoder over (mel, frames) feature matrices.
#[derive(Debug, Clone)]
pub struct ConvFbankEncoder {
    pub cfg: ConvEncoderConfig,
    conv_in: Conv1d,
    tail: ResidualTail,
}

pub struct ConvFbankCache {
    per_item: Vec<(Array2<f64>, Array2<f64>, usize)>, // (cols_in, a0, t_in)
    tail: TailCache,
}

impl ConvFbankEncoder {
    pub fn new(cfg: &ConvEncoderConfig, emb_dim: usize, rng: &mut impl Rng) -> ConvFbankEncoder {
        let conv_in = Conv1d::new(
            cfg.mel_bins,
            cfg.channels,
            cfg.in_kernel,
            1,
            cfg.in_kernel / 2,
            rng,
        );
        let tail = ResidualTail::new(cfg.channels, cfg.blocks, cfg.block_kernel, emb_dim, rng);
        ConvFbankEncoder { cfg: cfg.clone(), conv_in, tail }
    }

    pub fn min_frames(&self) -> usize {
        self.tail.min_frames().max(self.cfg.in_kernel)
    }

    /// items: (mel, frames) each; returns (batch, emb_dim).
    pub fn forward(&self, items: &[Array2<f64>]) -> (Array2<f64>, ConvFbankCache) {
        let mut per_item = Vec::with_capacity(items.len());
        let mut activations = Vec::with_capacity(items.len());
        for x in items {
            let (y, cols) = self.conv_in.forward_item(x);
            let a0 = relu(&y);
            per_item.push((cols, a0.clone(), x.ncols()));
            activations.push(a0);
        }
        let (emb, tail) = self.tail.forward(&activations);
        (emb, ConvFbankCache { per_item, tail })
    }

    pub fn backward(&mut self, cache: &ConvFbankCache, d_emb: &Array2<f64>) {
        let d_items = self.tail.backward(&cache.tail, d_emb);
        for (i, da0) in d_items.into_iter().enumerate() {
            let (cols, a0, t_in) = &cache.per_item[i];
            let dy = relu_backward(a0, &da0);
            self.conv_in.backward_item(cols, &dy, *t_in);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv_in.param_count() + self.tail.param_count()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        self.conv_in.append_params(out);
        self.tail.append_params(out);
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        self.conv_in.append_grads(out);
        self.tail.append_grads(out);
    }

    pub fn read_params(&mut self, cursor: &mut ParamCursor) {
        self.conv_in.read_params(cursor);
        self.tail.read_params(cursor);
    }

    pub fn zero_grads(&mut self) {
        self.conv_in.zero_grads();
        self.tail.zero_grads();
    }
}

/// Band-pass sinc kernel bank with trainable low/band cutoffs.
///
/// The time-domain kernel of an ideal band-pass over normalized frequencies
/// (nu1, nu2) is `w[m] = (sin(2 pi nu2 m) - sin(2 pi nu1 m)) / (pi m)` with
/// `w[0] = 2 (nu2 - nu1)`, windowed by a Hamming taper. Its derivative in the
/// cutoffs is `dw/dnu2[m] = 2 cos(2 pi nu2 m)` (and the negative for nu1),
/// which keeps the backward pass exact. Cutoffs are parameterized as
/// `nu1 = nu_min + low^2`, `nu2 = nu1 + nu_band_min + band^2`.
#[derive(Debug, Clone)]
pub struct SincConv {
    pub low: Array1<f64>,
    pub band: Array1<f64>,
    pub dlow: Array1<f64>,
    pub dband: Array1<f64>,
    pub kernel: usize,
    pub stride: usize,
    min_low_nu: f64,
    min_band_nu: f64,
    window: Vec<f64>,
}

impl SincConv {
    pub fn new(cfg: &RawEncoderConfig, sample_rate: f64) -> SincConv {
        assert!(cfg.kernel % 2 == 1, "sinc kernel length must be odd");
        let min_low_nu = cfg.min_low_hz / sample_rate;
        let min_band_nu = cfg.min_band_hz / sample_rate;
        // Mel-spaced initial bands between min_low_hz and 0.95 * Nyquist.
        let hz_to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let mel_to_hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
        let lo_mel = hz_to_mel(cfg.min_low_hz);
        let hi_mel = hz_to_mel(0.95 * sample_rate / 2.0);
        let n = cfg.filters;
        let edge = |i: usize| mel_to_hz(lo_mel + (hi_mel - lo_mel) * i as f64 / (n + 1) as f64);
        let mut low = Array1::zeros(n);
        let mut band = Array1::zeros(n);
        for f in 0..n {
            let lo_hz = edge(f);
            let hi_hz = edge(f + 2);
            let nu1 = lo_hz / sample_rate;
            let nu_band = (hi_hz - lo_hz) / sample_rate;
            low[f] = (nu1 - min_low_nu).max(1e-6).sqrt();
            band[f] = (nu_band - min_band_nu).max(1e-6).sqrt();
        }
        let window: Vec<f64> = (0..cfg.kernel)
            .map(|i| {
                0.54 - 0.46
                    * (2.0 * std::f64::consts::PI * i as f64 / (cfg.kernel - 1) as f64).cos()
            })
            .collect();
        SincConv {
            dlow: Array1::zeros(n),
            dband: Array1::zeros(n),
            low,
            band,
            kernel: cfg.kernel,
            stride: cfg.stride,
            min_low_nu,
            min_band_nu,
            window,
        }
    }

    pub fn filters(&self) -> usize {
        self.low.len()
    }

    fn cutoffs(&self, f: usize) -> (f64, f64) {
        let nu1 = self.min_low_nu + self.low[f] * self.low[f];
        let nu2 = nu1 + self.min_band_nu + self.band[f] * self.band[f];
        (nu1, nu2)
    }

    /// Materialized kernels, (filters, kernel).
    pub fn kernels(&self) -> Array2<f64> {
        let k = self.kernel;
        let center = (k / 2) as isize;
        let mut w = Array2::zeros((self.filters(), k));
        for f in 0..self.filters() {
            let (nu1, nu2) = self.cutoffs(f);
            for n in 0..k {
                let m = (n as isize - center) as f64;
                let ideal = if m == 0.0 {
                    2.0 * (nu2 - nu1)
                } else {
                    let tau = 2.0 * std::f64::consts::PI * m;
                    ((tau * nu2).sin() - (tau * nu1).sin()) / (std::f64::consts::PI * m)
                };
                w[(f, n)] = ideal * self.window[n];
            }
        }
        w
    }

    pub fn out_len(&self, n: usize) -> Option<usize> {
        if n < self.kernel {
            None
        } else {
            Some((n - self.kernel) / self.stride + 1)
        }
    }

    /// x: raw samples -> (y: (filters, t_out), im2col cache (kernel, t_out)).
    pub fn forward_item(&self, x: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let t_out = self.out_len(x.len()).expect("validated upstream");
        let mut cols = Array2::zeros((self.kernel, t_out));
        for j in 0..self.kernel {
            for t in 0..t_out {
                cols[(j, t)] = x[t * self.stride + j];
            }
        }
        let y = self.kernels().dot(&cols);
        (y, cols)
    }

    /// Chain the kernel-space gradient into the cutoff parameters.
    pub fn backward_item(&mut self, cols: &Array2<f64>, dy: &Array2<f64>) {
        let dk = dy.dot(&cols.t()); // (filters, kernel)
        let k = self.kernel;
        let center = (k / 2) as isize;
        for f in 0..self.filters() {
            let (nu1, nu2) = self.cutoffs(f);
            let mut g1 = 0.0; // dL/dnu1 (direct term)
            let mut g2 = 0.0; // dL/dnu2
            for n in 0..k {
                let m = (n as isize - center) as f64;
                let tau = 2.0 * std::f64::consts::PI * m;
                let upstream = dk[(f, n)] * self.window[n];
                g2 += upstream * 2.0 * (tau * nu2).cos();
                g1 += upstream * -2.0 * (tau * nu1).cos();
            }
            // nu2 depends on nu1; nu1 = f(low), band only enters nu2.
            self.dlow[f] += (g1 + g2) * 2.0 * self.low[f];
            self.dband[f] += g2 * 2.0 * self.band[f];
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.filters()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend(self.low.iter());
        out.extend(self.band.iter());
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        out.extend(self.dlow.iter());
        out.extend(self.dband.iter());
    }

    pub fn read_params(&mut self, cursor: &mut ParamCursor) {
        cursor.fill_array1(&mut self.low);
        cursor.fill_array1(&mut self.band);
    }

    pub fn zero_grads(&mut self) {
        self.dlow.fill(0.0);
        self.dband.fill(0.0);
    }
}

const LOG_COMPRESS_EPS: f64 = 1e-4;

/// Raw-waveform encoder: sinc filterbank, log-energy compression, residual
/// stack, statistics pooling.
#[derive(Debug, Clone)]
pub struct RawEncoder {
    pub cfg: RawEncoderConfig,
    sinc: SincConv,
    tail: ResidualTail,
}

pub struct RawCache {
    per_item: Vec<(Array2<f64>, Array2<f64>)>, // (cols, sinc output a)
    tail: TailCache,
}

impl RawEncoder {
    pub fn new(cfg: &RawEncoderConfig, sample_rate: f64, emb_dim: usize, rng: &mut impl Rng) -> RawEncoder {
        let sinc = SincConv::new(cfg, sample_rate);
        let tail = ResidualTail::new(cfg.filters, cfg.blocks, cfg.block_kernel, emb_dim, rng);
        RawEncoder { cfg: cfg.clone(), sinc, tail }
    }

    pub fn min_samples(&self) -> usize {
        self.cfg.kernel + self.cfg.stride * (self.tail.min_frames().saturating_sub(1))
    }

    pub fn forward(&self, items: &[&[f64]]) -> (Array2<f64>, RawCache) {
        let mut per_item = Vec::with_capacity(items.len());
        let mut activations = Vec::with_capacity(items.len());
        for x in items {
            let (a, cols) = self.sinc.forward_item(x);
            let t = a.mapv(|v| (v * v + LOG_COMPRESS_EPS).ln());
            per_item.push((cols, a));
            activations.push(t);
        }
        let (emb, tail) = self.tail.forward(&activations);
        (emb, RawCache { per_item, tail })
    }

    pub fn backward(&mut self, cache: &RawCache, d_emb: &Array2<f64>) {
        let d_items = self.tail.backward(&cache.tail, d_emb);
        for (i, dt) in d_items.into_iter().enumerate() {
            let (cols, a) = &cache.per_item[i];
            // d/da ln(a^2 + eps) = 2a / (a^2 + eps)
            let mut da = dt;
            da.zip_mut_with(a, |d, &av| {
                *d *= 2.0 * av / (av * av + LOG_COMPRESS_EPS);
            });
            self.sinc.backward_item(cols, &da);
        }
    }

    pub fn param_count(&self) -> usize {
        self.sinc.param_count() + self.tail.param_count()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        self.sinc.append_params(out);
        self.tail.append_params(out);
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        self.sinc.append_grads(out);
        self.tail.append_grads(out);
    }

    pub fn read_params(&mut self, cursor: &mut ParamCursor) {
        self.sinc.read_params(cursor);
        self.tail.read_params(cursor);
    }

    pub fn zero_grads(&mut self) {
        self.sinc.zero_grads();
        self.tail.zero_grads();
    }
}
