//! Dilated causal 1-D convolution.
//!
//! Output position `t` only sees inputs `t, t - d, ..., t - (k-1)d`; positions
//! before the start of the sequence read as zero. A strided convolution keeps
//! every `stride`-th output of the stride-1 result, starting at index 0.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::{gemm, View};
use super::{Scalar, Tensor3};

/// Reference single-channel causal convolution:
/// `out[t] = sum_j weights[j] * input[t - j * dilation]`.
pub fn causal_conv(input: &[f64], weights: &[f64], dilation: usize) -> Vec<f64> {
    assert!(dilation >= 1, "dilation must be at least 1");
    (0..input.len())
        .map(|t| {
            weights
                .iter()
                .enumerate()
                .filter_map(|(j, w)| t.checked_sub(j * dilation).map(|i| w * input[i]))
                .sum()
        })
        .collect()
}

/// Shape parameters of one layer on a receptive-field path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

/// Input span seen by one output of a stack of causal layers:
/// `1 + sum (k - 1) * d * jump`, where `jump` is the product of the strides
/// of the preceding layers.
pub fn receptive_field(path: &[ConvGeometry]) -> usize {
    let mut jump = 1;
    let mut rf = 1;
    for g in path {
        rf += (g.kernel - 1) * g.dilation * jump;
        jump *= g.stride;
    }
    rf
}

/// Columns per im2col chunk; bounds scratch memory while keeping GEMMs large.
const TARGET_COLS: usize = 4096;

/// Multi-channel causal convolution without bias (always followed by batch
/// normalization). Weights are `[c_out][c_in][kernel]`, tap `j` reading
/// `input[t - j * dilation]`.
#[derive(Debug, Clone)]
pub struct CausalConv1d<S> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub weight: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> CausalConv1d<S> {
    /// Fan-in variance-scaled (He) normal initialization.
    pub fn new<R: Rng>(c_in: usize, c_out: usize, kernel: usize, dilation: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (c_in * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = (0..c_out * c_in * kernel).map(|_| S::of(normal.sample(rng))).collect();
        CausalConv1d {
            c_in,
            c_out,
            kernel,
            dilation,
            stride,
            weight,
            grad: vec![S::zero(); c_out * c_in * kernel],
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel,
            dilation: self.dilation,
            stride: self.stride,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn chunk(&self, batch: usize, out_len: usize) -> usize {
        (TARGET_COLS / out_len.max(1)).clamp(1, batch.max(1))
    }

    fn im2col(&self, x: &Tensor3<S>, b0: usize, nb: usize, out_len: usize, col: &mut [S]) {
        let ncols = nb * out_len;
        for ci in 0..self.c_in {
            for j in 0..self.kernel {
                let row = ci * self.kernel + j;
                let offset = j * self.dilation;
                for bi in 0..nb {
                    let src = x.series(ci, b0 + bi);
                    let dst = &mut col[row * ncols + bi * out_len..row * ncols + (bi + 1) * out_len];
                    if self.stride == 1 {
                        let lead = offset.min(out_len);
                        dst[..lead].fill(S::zero());
                        dst[lead..].copy_from_slice(&src[..out_len - lead]);
                    } else {
                        for (to, d) in dst.iter_mut().enumerate() {
                            let pos = to * self.stride;
                            *d = if pos >= offset { src[pos - offset] } else { S::zero() };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcol: &[S], b0: usize, nb: usize, out_len: usize, dx: &mut Tensor3<S>) {
        let ncols = nb * out_len;
        for ci in 0..self.c_in {
            for j in 0..self.kernel {
                let row = ci * self.kernel + j;
                let offset = j * self.dilation;
                for bi in 0..nb {
                    let src = &dcol[row * ncols + bi * out_len..row * ncols + (bi + 1) * out_len];
                    let dst = dx.series_mut(ci, b0 + bi);
                    if self.stride == 1 {
                        let lead = offset.min(out_len);
                        for (d, &g) in dst[..out_len - lead].iter_mut().zip(&src[lead..]) {
                            *d += g;
                        }
                    } else {
                        for (to, &g) in src.iter().enumerate() {
                            let pos = to * self.stride;
                            if pos >= offset {
                                dst[pos - offset] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor3<S>) -> Tensor3<S> {
        assert_eq!(x.channels, self.c_in, "conv input channels");
        let out_len = self.out_len(x.len);
        let mut y = Tensor3::zeros(self.c_out, x.batch, out_len);
        let chunk = self.chunk(x.batch, out_len);
        let row_stride = x.batch * out_len;
        let mut col = vec![S::zero(); self.rows() * chunk * out_len];
        let mut b0 = 0;
        while b0 < x.batch {
            let nb = chunk.min(x.batch - b0);
            let ncols = nb * out_len;
            let col = &mut col[..self.rows() * ncols];
            self.im2col(x, b0, nb, out_len, col);
            gemm(
                S::one(),
                View::rm(&self.weight, self.c_out, self.rows()),
                View::rm(col, self.rows(), ncols),
                S::zero(),
                &mut y.data[b0 * out_len..],
                row_stride,
            );
            b0 += nb;
        }
        y
    }

    /// Accumulates the weight gradient and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, x: &Tensor3<S>, dy: &Tensor3<S>, need_input_grad: bool) -> Option<Tensor3<S>> {
        let out_len = self.out_len(x.len);
        assert_eq!((dy.channels, dy.batch, dy.len), (self.c_out, x.batch, out_len));
        let rows = self.rows();
        let chunk = self.chunk(x.batch, out_len);
        let row_stride = x.batch * out_len;
        let mut col = vec![S::zero(); rows * chunk * out_len];
        let mut dcol = if need_input_grad {
            vec![S::zero(); rows * chunk * out_len]
        } else {
            Vec::new()
        };
        let mut dx = need_input_grad.then(|| Tensor3::zeros(self.c_in, x.batch, x.len));
        let mut b0 = 0;
        while b0 < x.batch {
            let nb = chunk.min(x.batch - b0);
            let ncols = nb * out_len;
            let dy_chunk = View {
                data: &dy.data[b0 * out_len..],
                rows: self.c_out,
                cols: ncols,
                rs: row_stride,
                cs: 1,
            };
            let col = &mut col[..rows * ncols];
            self.im2col(x, b0, nb, out_len, col);
            gemm(S::one(), dy_chunk, View::rm_t(col, ncols, rows), S::one(), &mut self.grad, rows);
            if let Some(dx) = dx.as_mut() {
                let dcol = &mut dcol[..rows * ncols];
                gemm(
                    S::one(),
                    View::rm_t(&self.weight, rows, self.c_out),
                    dy_chunk,
                    S::zero(),
                    dcol,
                    ncols,
                );
                self.col2im(dcol, b0, nb, out_len, dx);
            }
            b0 += nb;
        }
        dx
    }
}

/// A plain single-channel stack of causal convolutions, used to probe
/// receptive-field growth independently of the full network.
#[derive(Debug, Clone)]
pub struct CausalConvStack {
    pub layers: Vec<(Vec<f64>, usize)>,
}

impl CausalConvStack {
    pub fn new(layers: Vec<(Vec<f64>, usize)>) -> Self {
        CausalConvStack { layers }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.layers
            .iter()
            .fold(input.to_vec(), |x, (w, d)| causal_conv(&x, w, *d))
    }

    pub fn geometry(&self) -> Vec<ConvGeometry> {
        self.layers
            .iter()
            .map(|(w, d)| ConvGeometry {
                kernel: w.len(),
                dilation: *d,
                stride: 1,
            })
            .collect()
    }

    /// Counts the input positions whose perturbation changes the last output
    /// of a `len`-long sequence.
    pub fn probe_receptive_field(&self, len: usize) -> usize {
        let base_input: Vec<f64> = (0..len).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let base = *self.forward(&base_input).last().expect("non-empty");
        (0..len)
            .filter(|&i| {
                let mut x = base_input.clone();
                x[i] += 1.0;
                (self.forward(&x).last().expect("non-empty") - base).abs() > 1e-12
            })
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn causal_conv_examples() {
        assert_eq!(causal_conv(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0], 1), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(causal_conv(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0], 2), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn receptive_field_formula() {
        let g = |kernel, dilation| ConvGeometry { kernel, dilation, stride: 1 };
        assert_eq!(receptive_field(&[g(3, 1)]), 3);
        assert_eq!(receptive_field(&[g(3, 1), g(3, 2), g(3, 4), g(3, 8)]), 31);
        let strided = [
            ConvGeometry { kernel: 3, dilation: 1, stride: 2 },
            ConvGeometry { kernel: 3, dilation: 1, stride: 1 },
        ];
        assert_eq!(receptive_field(&strided), 1 + 2 + 4);
    }

    /// Naive multi-channel strided conv for checking the im2col path.
    fn naive(conv: &CausalConv1d<f64>, x: &Tensor3<f64>) -> Tensor3<f64> {
        let out_len = conv.out_len(x.len);
        let mut y = Tensor3::zeros(conv.c_out, x.batch, out_len);
        for co in 0..conv.c_out {
            for b in 0..x.batch {
                for to in 0..out_len {
                    let mut acc = 0.0;
                    for ci in 0..conv.c_in {
                        for j in 0..conv.kernel {
                            let t = to * conv.stride;
                            if let Some(p) = t.checked_sub(j * conv.dilation) {
                                acc += conv.weight[(co * conv.c_in + ci) * conv.kernel + j] * x.at(ci, b, p);
                            }
                        }
                    }
                    y.series_mut(co, b)[to] = acc;
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, b: usize, t: usize) -> Tensor3<f64> {
        Tensor3::from_data(c, b, t, (0..c * b * t).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn layer_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(c_in, c_out, k, d, s, len) in &[
            (1, 3, 7, 1, 2, 19),
            (3, 4, 3, 4, 1, 17),
            (2, 5, 3, 8, 2, 40),
            (4, 2, 1, 1, 2, 9),
        ] {
            let conv = CausalConv1d::<f64>::new(c_in, c_out, k, d, s, &mut rng);
            let x = random_tensor(&mut rng, c_in, 3, len);
            let got = conv.forward(&x);
            let want = naive(&conv, &x);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = CausalConv1d::<f64>::new(2, 3, 3, 2, 2, &mut rng);
        let x = random_tensor(&mut rng, 2, 2, 11);
        let dy = random_tensor(&mut rng, 3, 2, conv.out_len(11));
        let objective = |c: &CausalConv1d<f64>, x: &Tensor3<f64>| -> f64 {
            c.forward(x).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum()
        };
        let dx = conv.backward(&x, &dy, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7, "dx[{i}] {fd} vs {}", dx.data[i]);
        }
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight[i] += h;
            let mut cm = conv.clone();
            cm.weight[i] -= h;
            let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * h);
            assert!((fd - conv.grad[i]).abs() < 1e-7, "dw[{i}] {fd} vs {}", conv.grad[i]);
        }
    }

    #[test]
    fn plain_stack_probe_counts_31() {
        let stack = CausalConvStack::new(
            [1, 2, 4, 8].iter().map(|&d| (vec![0.7, -0.4, 0.9], d)).collect(),
        );
        assert_eq!(stack.probe_receptive_field(64), 31);
        assert_eq!(receptive_field(&stack.geometry()), 31);
    }
}
