use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::{gemm, View};
use super::{Scalar, Tensor3};

/// Per-channel batch normalization over (sample, time).
#[derive(Debug, Clone)]
pub struct BatchNorm<S> {
    pub channels: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub grad_gamma: Vec<S>,
    pub grad_beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    /// Training batches folded into the running statistics so far.
    pub updates: u64,
}

/// Weight of the newest batch in the running statistics once warmed up.
/// Earlier batches use a cumulative average, `1 / (updates + 1)`.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Batch statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub inv_std: Vec<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            grad_gamma: vec![S::zero(); channels],
            grad_beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            updates: 0,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor3<S>) -> (Tensor3<S>, BnStats<S>) {
        let n = x.batch * x.len;
        let mut y = Tensor3::zeros(x.channels, x.batch, x.len);
        let mut stats = BnStats {
            mean: Vec::with_capacity(x.channels),
            inv_std: Vec::with_capacity(x.channels),
        };
        let m = S::of(BN_MOMENTUM.max(1.0 / (self.updates as f64 + 1.0)));
        self.updates += 1;
        for c in 0..self.channels {
            let row = x.channel(c);
            let mean = sum_f64(x, c, |v| v) / n as f64;
            let mean_s = S::of(mean);
            let var = sum_f64(x, c, |v| (v - mean_s) * (v - mean_s)) / n as f64;
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            let inv_s = S::of(inv_std);
            let scale = inv_s * self.gamma[c];
            let shift = self.beta[c] - mean_s * scale;
            for (o, &v) in y.channel_mut(c).iter_mut().zip(row) {
                *o = v * scale + shift;
            }
            let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
            self.running_mean[c] = (S::one() - m) * self.running_mean[c] + m * mean_s;
            self.running_var[c] = (S::one() - m) * self.running_var[c] + m * S::of(unbiased);
            stats.mean.push(mean_s);
            stats.inv_std.push(inv_s);
        }
        (y, stats)
    }

    pub fn forward_infer(&self, x: &Tensor3<S>) -> Tensor3<S> {
        let mut y = Tensor3::zeros(x.channels, x.batch, x.len);
        for c in 0..self.channels {
            let inv = S::one() / (self.running_var[c] + S::of(BN_EPS)).sqrt();
            let scale = self.gamma[c] * inv;
            let shift = self.beta[c] - self.running_mean[c] * scale;
            for (o, &v) in y.channel_mut(c).iter_mut().zip(x.channel(c)) {
                *o = v * scale + shift;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor3<S>, stats: &BnStats<S>, dy: &Tensor3<S>) -> Tensor3<S> {
        let n = x.batch * x.len;
        let n_s = S::of(n as f64);
        let mut dx = Tensor3::zeros(x.channels, x.batch, x.len);
        for c in 0..self.channels {
            let (mean, inv) = (stats.mean[c], stats.inv_std[c]);
            let (xr, dyr) = (x.channel(c), dy.channel(c));
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for b in 0..x.batch {
                let (xs, gs) = (x.series(c, b), dy.series(c, b));
                sum_dy += lane_sum(gs, gs, |g, _| g).to_f64().unwrap();
                sum_dy_xhat += lane_sum(xs, gs, |v, g| g * (v - mean)).to_f64().unwrap();
            }
            sum_dy_xhat *= inv.to_f64().unwrap();
            self.grad_gamma[c] += S::of(sum_dy_xhat);
            self.grad_beta[c] += S::of(sum_dy);
            let k = self.gamma[c] * inv / n_s;
            let (sdy, sdyx) = (S::of(sum_dy), S::of(sum_dy_xhat));
            for ((o, &v), &g) in dx.channel_mut(c).iter_mut().zip(xr).zip(dyr) {
                let xhat = (v - mean) * inv;
                *o = k * (n_s * g - sdy - xhat * sdyx);
            }
        }
        dx
    }
}

/// `sum f(a[i], b[i])` in eight independent lanes so the loop vectorizes.
fn lane_sum<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> S {
    let mut lanes = [S::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            lanes[j] += f(x[j], y[j]);
        }
    }
    let tail = ra.iter().zip(rb).fold(S::zero(), |acc, (&x, &y)| acc + f(x, y));
    lanes.iter().fold(tail, |acc, &v| acc + v)
}

/// Sum of `f(v)` over channel `c`, accumulated per series in `S` and across
/// series in `f64`.
fn sum_f64<S: Scalar>(x: &Tensor3<S>, c: usize, f: impl Fn(S) -> S) -> f64 {
    (0..x.batch)
        .map(|b| {
            let s = x.series(c, b);
            lane_sum(s, s, |v, _| f(v)).to_f64().unwrap()
        })
        .sum()
}

/// Fully connected layer on row-major `[batch][features]` input.
#[derive(Debug, Clone)]
pub struct Dense<S> {
    pub n_in: usize,
    pub n_out: usize,
    /// `[n_out][n_in]`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub grad_weight: Vec<S>,
    pub grad_bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    /// `gain` 2 for rectified layers (He), 1 for the softmax layer.
    pub fn new<R: Rng>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (gain / n_in as f64).sqrt()).expect("valid std");
        Dense {
            n_in,
            n_out,
            weight: (0..n_in * n_out).map(|_| S::of(normal.sample(rng))).collect(),
            bias: vec![S::zero(); n_out],
            grad_weight: vec![S::zero(); n_in * n_out],
            grad_bias: vec![S::zero(); n_out],
        }
    }

    pub fn forward(&self, x: &[S], batch: usize) -> Vec<S> {
        assert_eq!(x.len(), batch * self.n_in, "dense input width");
        let mut y: Vec<S> = (0..batch).flat_map(|_| self.bias.iter().copied()).collect();
        gemm(
            S::one(),
            View::rm(x, batch, self.n_in),
            View::rm_t(&self.weight, self.n_in, self.n_out),
            S::one(),
            &mut y,
            self.n_out,
        );
        y
    }

    pub fn backward(&mut self, x: &[S], dy: &[S], batch: usize, need_input_grad: bool) -> Option<Vec<S>> {
        gemm(
            S::one(),
            View::rm_t(dy, self.n_out, batch),
            View::rm(x, batch, self.n_in),
            S::one(),
            &mut self.grad_weight,
            self.n_in,
        );
        for row in dy.chunks(self.n_out) {
            for (g, &d) in self.grad_bias.iter_mut().zip(row) {
                *g += d;
            }
        }
        need_input_grad.then(|| {
            let mut dx = vec![S::zero(); batch * self.n_in];
            gemm(
                S::one(),
                View::rm(dy, batch, self.n_out),
                View::rm(&self.weight, self.n_out, self.n_in),
                S::zero(),
                &mut dx,
                self.n_in,
            );
            dx
        })
    }
}

pub fn relu_inplace<S: Scalar>(v: &mut [S]) {
    for x in v {
        if *x < S::zero() {
            *x = S::zero();
        }
    }
}

/// Zeroes gradient entries where the rectifier output was not positive.
pub fn relu_backward_inplace<S: Scalar>(grad: &mut [S], output: &[S]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= S::zero() {
            *g = S::zero();
        }
    }
}

/// Causal max-pool: output `p` is the max over inputs
/// `p*stride, p*stride - 1, ..., p*stride - window + 1` that exist.
/// Returns the pooled tensor and the winning input index per output.
pub fn max_pool_causal<S: Scalar>(x: &Tensor3<S>, window: usize, stride: usize) -> (Tensor3<S>, Vec<u32>) {
    let out_len = x.len.div_ceil(stride);
    let mut y = Tensor3::zeros(x.channels, x.batch, out_len);
    let mut arg = vec![0u32; x.channels * x.batch * out_len];
    for c in 0..x.channels {
        for b in 0..x.batch {
            let src = x.series(c, b);
            let base = (c * x.batch + b) * out_len;
            let dst = y.series_mut(c, b);
            for (p, d) in dst.iter_mut().enumerate() {
                let end = p * stride;
                let start = (end + 1).saturating_sub(window);
                let mut best = end;
                for i in (start..end).rev() {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                *d = src[best];
                arg[base + p] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<S: Scalar>(dy: &Tensor3<S>, arg: &[u32], in_len: usize) -> Tensor3<S> {
    let mut dx = Tensor3::zeros(dy.channels, dy.batch, in_len);
    for c in 0..dy.channels {
        for b in 0..dy.batch {
            let base = (c * dy.batch + b) * dy.len;
            let g = dy.series(c, b);
            let dst = dx.series_mut(c, b);
            for (p, &v) in g.iter().enumerate() {
                dst[arg[base + p] as usize] += v;
            }
        }
    }
    dx
}

/// Window mean with the same causal geometry as [`max_pool_causal`]; the
/// linear stand-in used by receptive-field probes.
pub fn mean_pool_causal<S: Scalar>(x: &Tensor3<S>, window: usize, stride: usize) -> Tensor3<S> {
    let out_len = x.len.div_ceil(stride);
    let mut y = Tensor3::zeros(x.channels, x.batch, out_len);
    let w = S::of(window as f64);
    for c in 0..x.channels {
        for b in 0..x.batch {
            let src = x.series(c, b);
            for (p, d) in y.series_mut(c, b).iter_mut().enumerate() {
                let end = p * stride;
                let start = (end + 1).saturating_sub(window);
                *d = src[start..=end].iter().fold(S::zero(), |a, &v| a + v) / w;
            }
        }
    }
    y
}

/// Mean over time, producing row-major `[batch][channels]`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor3<S>) -> Vec<S> {
    let mut out = vec![S::zero(); x.batch * x.channels];
    let inv = S::one() / S::of(x.len as f64);
    for c in 0..x.channels {
        for b in 0..x.batch {
            out[b * x.channels + c] = x.series(c, b).iter().fold(S::zero(), |a, &v| a + v) * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<S: Scalar>(d: &[S], channels: usize, batch: usize, len: usize) -> Tensor3<S> {
    let mut dx = Tensor3::zeros(channels, batch, len);
    let inv = S::one() / S::of(len as f64);
    for c in 0..channels {
        for b in 0..batch {
            dx.series_mut(c, b).fill(d[b * channels + c] * inv);
        }
    }
    dx
}
