//! Layer kernels with explicit backward passes.
//!
//! Per-sample kernels operate on one `[c, h, w, d]` tensor. Batch-level
//! wrappers fan samples out over rayon and reduce parameter gradients in
//! sample order, so results do not depend on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamStore};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Parameter gradients produced by one backward call: `(param index, grad)`.
pub type Grads<T> = Vec<(usize, Vec<T>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn declare<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let k3 = kernel * kernel * kernel;
        let weight = ps.declare(
            &format!("{name}.weight"),
            ParamKind::Weight,
            &[out_ch, in_ch, kernel, kernel, kernel],
            in_ch * k3,
        );
        let bias = bias.then(|| ps.declare(&format!("{name}.bias"), ParamKind::Bias, &[out_ch], 0));
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            dilation,
            weight,
            bias,
        }
    }

    pub fn out_len(&self, n: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (n + 2 * self.padding).saturating_sub(span) / self.stride + 1
    }

    pub fn out_dims(&self, d: [usize; 3]) -> [usize; 3] {
        [self.out_len(d[0]), self.out_len(d[1]), self.out_len(d[2])]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn k3(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Valid output range along one axis for kernel tap `tap`: the outputs
    /// `o` with `0 <= o * stride + tap * dilation - padding < n`.
    fn valid_range(&self, tap: usize, n: usize, out: usize) -> (usize, usize, isize) {
        let offset = (tap * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        let hi = ((n as isize - offset) + s - 1) / s;
        let lo = lo.clamp(0, out as isize) as usize;
        let hi = hi.clamp(0, out as isize) as usize;
        (lo, hi.max(lo), offset)
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, out: [usize; 3]) -> Vec<T> {
        let [h, w, d] = x.spatial();
        let [ho, wo, dd] = out;
        let p = ho * wo * dd;
        let k = self.kernel;
        let s = self.stride;
        let mut cols = vec![T::zero(); self.in_ch * self.k3() * p];
        for ci in 0..self.in_ch {
            let src = x.channel(ci);
            for a in 0..k {
                let (ia, ib, io) = self.valid_range(a, h, ho);
                for b in 0..k {
                    let (ja, jb, jo) = self.valid_range(b, w, wo);
                    for c in 0..k {
                        let (ka, kb, ko) = self.valid_range(c, d, dd);
                        let row = ((ci * k + a) * k + b) * k + c;
                        let dst = &mut cols[row * p..(row + 1) * p];
                        for oi in ia..ib {
                            let ii = (oi * s) as isize + io;
                            for oj in ja..jb {
                                let jj = (oj * s) as isize + jo;
                                let base = (ii as usize * w + jj as usize) * d;
                                let orow = (oi * wo + oj) * dd;
                                for ok in ka..kb {
                                    let kk = ((ok * s) as isize + ko) as usize;
                                    dst[orow + ok] = src[base + kk];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], input: [usize; 3], out: [usize; 3]) -> Tensor<T> {
        let [h, w, d] = input;
        let [ho, wo, dd] = out;
        let p = ho * wo * dd;
        let k = self.kernel;
        let s = self.stride;
        let mut gx = Tensor::zeros(&[self.in_ch, h, w, d]);
        let n = h * w * d;
        for ci in 0..self.in_ch {
            let dst = &mut gx.data[ci * n..(ci + 1) * n];
            for a in 0..k {
                let (ia, ib, io) = self.valid_range(a, h, ho);
                for b in 0..k {
                    let (ja, jb, jo) = self.valid_range(b, w, wo);
                    for c in 0..k {
                        let (ka, kb, ko) = self.valid_range(c, d, dd);
                        let row = ((ci * k + a) * k + b) * k + c;
                        let src = &cols[row * p..(row + 1) * p];
                        for oi in ia..ib {
                            let ii = (oi * s) as isize + io;
                            for oj in ja..jb {
                                let jj = (oj * s) as isize + jo;
                                let base = (ii as usize * w + jj as usize) * d;
                                let orow = (oi * wo + oj) * dd;
                                for ok in ka..kb {
                                    let kk = ((ok * s) as isize + ko) as usize;
                                    dst[base + kk] = dst[base + kk] + src[orow + ok];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_ch, "conv input channels");
        let out = self.out_dims(x.spatial());
        let p = out.iter().product::<usize>();
        let kdim = self.in_ch * self.k3();
        let mut y = Tensor::zeros(&[self.out_ch, out[0], out[1], out[2]]);
        if let Some(b) = self.bias {
            let bias = ps.value(b);
            for co in 0..self.out_ch {
                y.data[co * p..(co + 1) * p].fill(bias[co]);
            }
        }
        let beta = if self.bias.is_some() { T::one() } else { T::zero() };
        let w = ps.value(self.weight);
        if self.is_pointwise() {
            T::gemm(self.out_ch, kdim, p, T::one(), w, kdim as isize, 1, &x.data, p as isize, 1, beta, &mut y.data, p as isize, 1);
        } else {
            let cols = self.im2col(x, out);
            T::gemm(self.out_ch, kdim, p, T::one(), w, kdim as isize, 1, &cols, p as isize, 1, beta, &mut y.data, p as isize, 1);
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor<T>,
        gy: &Tensor<T>,
        need_gx: bool,
    ) -> (Grads<T>, Option<Tensor<T>>) {
        let out = gy.spatial();
        let p = out.iter().product::<usize>();
        let kdim = self.in_ch * self.k3();
        let owned;
        let cols: &[T] = if self.is_pointwise() {
            &x.data
        } else {
            owned = self.im2col(x, out);
            &owned
        };
        let mut gw = vec![T::zero(); self.out_ch * kdim];
        // gW = gy * cols^T
        T::gemm(self.out_ch, p, kdim, T::one(), &gy.data, p as isize, 1, cols, 1, p as isize, T::zero(), &mut gw, kdim as isize, 1);
        let mut grads = vec![(self.weight, gw)];
        if let Some(b) = self.bias {
            let gb = (0..self.out_ch)
                .map(|co| gy.data[co * p..(co + 1) * p].iter().copied().sum())
                .collect();
            grads.push((b, gb));
        }
        let gx = need_gx.then(|| {
            let w = ps.value(self.weight);
            let mut gcols = vec![T::zero(); kdim * p];
            // gcols = W^T * gy
            T::gemm(kdim, self.out_ch, p, T::one(), w, 1, kdim as isize, &gy.data, p as isize, 1, T::zero(), &mut gcols, p as isize, 1);
            if self.is_pointwise() {
                Tensor::from_vec(&x.shape, gcols)
            } else {
                self.col2im(&gcols, x.spatial(), out)
            }
        });
        (grads, gx)
    }
}

// ---------------------------------------------------------------------------
// Normalization

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Batch,
    Instance,
    None,
}

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub kind: Normalization,
    pub channels: usize,
    pub scale: usize,
    pub shift: usize,
    pub running: Option<(usize, usize)>,
}

impl Norm {
    pub fn declare<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        kind: Normalization,
        channels: usize,
    ) -> Option<Self> {
        if kind == Normalization::None {
            return None;
        }
        let scale = ps.declare(&format!("{name}.scale"), ParamKind::NormScale, &[channels], 0);
        let shift = ps.declare(&format!("{name}.shift"), ParamKind::NormShift, &[channels], 0);
        let running = (kind == Normalization::Batch).then(|| {
            (
                ps.declare(&format!("{name}.running_mean"), ParamKind::RunningMean, &[channels], 0),
                ps.declare(&format!("{name}.running_var"), ParamKind::RunningVar, &[channels], 0),
            )
        });
        Some(Self {
            kind,
            channels,
            scale,
            shift,
            running,
        })
    }

    /// Per-channel (mean, biased variance) for one sample or pooled over a
    /// batch, accumulated in f64 and in sample order.
    fn stats<T: Scalar>(&self, xs: &[&Tensor<T>]) -> Vec<(f64, f64)> {
        (0..self.channels)
            .map(|c| {
                let mut n = 0usize;
                let mut sum = 0.0;
                for x in xs {
                    let ch = x.channel(c);
                    n += ch.len();
                    sum += ch.iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / n as f64;
                let mut var = 0.0;
                for x in xs {
                    var += x
                        .channel(c)
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                (mean, var / n as f64)
            })
            .collect()
    }

    fn apply<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>, stats: &[(f64, f64)]) -> Tensor<T> {
        let gamma = ps.value(self.scale);
        let beta = ps.value(self.shift);
        let n = x.voxels();
        let mut y = x.clone();
        for c in 0..self.channels {
            let (mean, var) = stats[c];
            let inv = T::of(1.0 / (var + NORM_EPS).sqrt());
            let m = T::of(mean);
            for v in &mut y.data[c * n..(c + 1) * n] {
                *v = gamma[c] * (*v - m) * inv + beta[c];
            }
        }
        y
    }

    fn uses_batch_stats(&self, mode: Mode) -> bool {
        self.kind == Normalization::Batch && mode == Mode::Train
    }

    fn eval_stats<T: Scalar>(&self, ps: &ParamStore<T>) -> Vec<(f64, f64)> {
        let (rm, rv) = self.running.expect("batch norm has running stats");
        ps.value(rm)
            .iter()
            .zip(ps.value(rv))
            .map(|(m, v)| (m.as_f64(), v.as_f64()))
            .collect()
    }

    /// Returns outputs plus the running-statistic values to store after a
    /// training-mode batch-norm pass.
    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        xs: &[Tensor<T>],
        mode: Mode,
    ) -> (Vec<Tensor<T>>, Grads<T>) {
        match (self.kind, mode) {
            (Normalization::Instance, _) => (
                xs.par_iter()
                    .map(|x| self.apply(ps, x, &self.stats(&[x])))
                    .collect(),
                Vec::new(),
            ),
            (Normalization::Batch, Mode::Train) => {
                let refs: Vec<&Tensor<T>> = xs.iter().collect();
                let stats = self.stats(&refs);
                let ys = xs.par_iter().map(|x| self.apply(ps, x, &stats)).collect();
                let (rm, rv) = self.running.expect("batch norm has running stats");
                let count = xs.iter().map(|x| x.voxels()).sum::<usize>() as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let new_mean = ps
                    .value(rm)
                    .iter()
                    .zip(&stats)
                    .map(|(r, s)| T::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * s.0))
                    .collect();
                let new_var = ps
                    .value(rv)
                    .iter()
                    .zip(&stats)
                    .map(|(r, s)| {
                        T::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * s.1 * unbias)
                    })
                    .collect();
                (ys, vec![(rm, new_mean), (rv, new_var)])
            }
            (Normalization::Batch, Mode::Eval) => {
                let stats = self.eval_stats(ps);
                (xs.par_iter().map(|x| self.apply(ps, x, &stats)).collect(), Vec::new())
            }
            (Normalization::None, _) => (xs.to_vec(), Vec::new()),
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        xs: &[Tensor<T>],
        gys: &[Tensor<T>],
        mode: Mode,
    ) -> (Grads<T>, Vec<Tensor<T>>) {
        let gamma = ps.value(self.scale);
        let c_n = self.channels;
        // Per-group normalized inputs and reductions; a group is one sample
        // (instance norm) or the whole batch (batch norm in training).
        let groups: Vec<Vec<usize>> = if self.uses_batch_stats(mode) {
            vec![(0..xs.len()).collect()]
        } else {
            (0..xs.len()).map(|i| vec![i]).collect()
        };
        let fixed = (self.kind == Normalization::Batch && mode == Mode::Eval)
            .then(|| self.eval_stats(ps));
        let per_group: Vec<(Vec<Tensor<T>>, Vec<T>, Vec<T>)> = groups
            .par_iter()
            .map(|members| {
                let refs: Vec<&Tensor<T>> = members.iter().map(|&i| &xs[i]).collect();
                let stats = fixed.clone().unwrap_or_else(|| self.stats(&refs));
                let mut g_gamma = vec![T::zero(); c_n];
                let mut g_beta = vec![T::zero(); c_n];
                let mut gxs: Vec<Tensor<T>> = members.iter().map(|&i| Tensor::zeros(&xs[i].shape)).collect();
                for c in 0..c_n {
                    let (mean, var) = stats[c];
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    let mut count = 0usize;
                    let mut sum_gy = 0.0;
                    let mut sum_gy_xhat = 0.0;
                    for &i in members {
                        let x = xs[i].channel(c);
                        let gy = gys[i].channel(c);
                        count += x.len();
                        for (xv, gv) in x.iter().zip(gy) {
                            let xhat = (xv.as_f64() - mean) * inv;
                            sum_gy += gv.as_f64();
                            sum_gy_xhat += gv.as_f64() * xhat;
                        }
                    }
                    g_gamma[c] = T::of(sum_gy_xhat);
                    g_beta[c] = T::of(sum_gy);
                    let g = gamma[c].as_f64();
                    let m_gy = sum_gy / count as f64;
                    let m_gy_xhat = sum_gy_xhat / count as f64;
                    for (slot, &i) in members.iter().enumerate() {
                        let n = xs[i].voxels();
                        let x = xs[i].channel(c);
                        let gy = gys[i].channel(c);
                        let dst = &mut gxs[slot].data[c * n..(c + 1) * n];
                        for ((d, xv), gv) in dst.iter_mut().zip(x).zip(gy) {
                            let val = if fixed.is_some() {
                                g * inv * gv.as_f64()
                            } else {
                                let xhat = (xv.as_f64() - mean) * inv;
                                g * inv * (gv.as_f64() - m_gy - xhat * m_gy_xhat)
                            };
                            *d = T::of(val);
                        }
                    }
                }
                (gxs, g_gamma, g_beta)
            })
            .collect();
        let mut g_gamma = vec![T::zero(); c_n];
        let mut g_beta = vec![T::zero(); c_n];
        let mut gxs = Vec::with_capacity(xs.len());
        for (gx, gg, gb) in per_group {
            for c in 0..c_n {
                g_gamma[c] = g_gamma[c] + gg[c];
                g_beta[c] = g_beta[c] + gb[c];
            }
            gxs.extend(gx);
        }
        (vec![(self.scale, g_gamma), (self.shift, g_beta)], gxs)
    }
}

// ---------------------------------------------------------------------------
// Fully connected

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn declare<T: Scalar>(ps: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = ps.declare(&format!("{name}.weight"), ParamKind::Weight, &[outputs, inputs], inputs);
        let bias = ps.declare(&format!("{name}.bias"), ParamKind::Bias, &[outputs], 0);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.len(), self.inputs, "linear input width");
        let mut y = ps.value(self.bias).to_vec();
        T::gemm(self.outputs, self.inputs, 1, T::one(), ps.value(self.weight), self.inputs as isize, 1, &x.data, 1, 1, T::one(), &mut y, 1, 1);
        Tensor::from_vec(&[self.outputs], y)
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor<T>,
        gy: &Tensor<T>,
        need_gx: bool,
    ) -> (Grads<T>, Option<Tensor<T>>) {
        let mut gw = vec![T::zero(); self.outputs * self.inputs];
        T::gemm(self.outputs, 1, self.inputs, T::one(), &gy.data, 1, 1, &x.data, 1, 1, T::zero(), &mut gw, self.inputs as isize, 1);
        let gx = need_gx.then(|| {
            let mut gx = vec![T::zero(); self.inputs];
            T::gemm(self.inputs, self.outputs, 1, T::one(), ps.value(self.weight), 1, self.inputs as isize, &gy.data, 1, 1, T::zero(), &mut gx, 1, 1);
            Tensor::from_vec(&x.shape, gx)
        });
        (vec![(self.weight, gw), (self.bias, gy.data.clone())], gx)
    }
}

// ---------------------------------------------------------------------------
// Pointwise

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    leaky_relu(x, T::zero())
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect(),
    }
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>, slope: T) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { g * slope })
            .collect(),
    }
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
    }
}

pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&s, &g)| g * s * (T::one() - s))
            .collect(),
    }
}

/// Softmax over the channel axis of a `[c, h, w, d]` tensor.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.channels();
    let n = x.voxels();
    let mut y = Tensor::zeros(&x.shape);
    for v in 0..n {
        let mut m = x.data[v];
        for ci in 1..c {
            m = m.max(x.data[ci * n + v]);
        }
        let mut sum = T::zero();
        for ci in 0..c {
            let e = (x.data[ci * n + v] - m).exp();
            y.data[ci * n + v] = e;
            sum = sum + e;
        }
        for ci in 0..c {
            y.data[ci * n + v] = y.data[ci * n + v] / sum;
        }
    }
    y
}

pub fn softmax_channels_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let c = y.channels();
    let n = y.voxels();
    let mut gx = Tensor::zeros(&y.shape);
    for v in 0..n {
        let mut dot = T::zero();
        for ci in 0..c {
            dot = dot + y.data[ci * n + v] * gy.data[ci * n + v];
        }
        for ci in 0..c {
            gx.data[ci * n + v] = y.data[ci * n + v] * (gy.data[ci * n + v] - dot);
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Trilinear upsampling (half-pixel centers, edge clamped)

/// Source taps `(i0, i1, w1)` for each output index along one axis.
fn linear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}

/// Linear resize along `axis` (1, 2 or 3) of a `[c, a, b, d]` tensor.
fn resize_axis<T: Scalar>(x: &Tensor<T>, axis: usize, factor: usize) -> Tensor<T> {
    let mut shape = x.shape.clone();
    let n_in = shape[axis];
    shape[axis] *= factor;
    let taps = linear_taps(n_in, factor);
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    let mut y = Tensor::zeros(&shape);
    let n_out = shape[axis];
    for o in 0..outer {
        for (t, &(i0, i1, w1)) in taps.iter().enumerate() {
            let w1 = T::of(w1);
            let w0 = T::one() - w1;
            let src0 = (o * n_in + i0) * inner;
            let src1 = (o * n_in + i1) * inner;
            let dst = (o * n_out + t) * inner;
            for q in 0..inner {
                y.data[dst + q] = w0 * x.data[src0 + q] + w1 * x.data[src1 + q];
            }
        }
    }
    y
}

/// Adjoint of [`resize_axis`].
fn resize_axis_adjoint<T: Scalar>(gy: &Tensor<T>, axis: usize, factor: usize) -> Tensor<T> {
    let mut shape = gy.shape.clone();
    shape[axis] /= factor;
    let n_in = shape[axis];
    let taps = linear_taps(n_in, factor);
    let outer: usize = gy.shape[..axis].iter().product();
    let inner: usize = gy.shape[axis + 1..].iter().product();
    let n_out = gy.shape[axis];
    let mut gx = Tensor::zeros(&shape);
    for o in 0..outer {
        for (t, &(i0, i1, w1)) in taps.iter().enumerate() {
            let w1 = T::of(w1);
            let w0 = T::one() - w1;
            let src = (o * n_out + t) * inner;
            let dst0 = (o * n_in + i0) * inner;
            let dst1 = (o * n_in + i1) * inner;
            for q in 0..inner {
                let g = gy.data[src + q];
                gx.data[dst0 + q] = gx.data[dst0 + q] + w0 * g;
                gx.data[dst1 + q] = gx.data[dst1 + q] + w1 * g;
            }
        }
    }
    gx
}

/// Trilinear upsampling of a `[c, h, w, d]` tensor by an integer factor,
/// sampling at half-pixel centers (`src = (dst + 0.5) / f - 0.5`, clamped
/// at the borders).
pub fn upsample_trilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let y = resize_axis(x, 1, factor);
    let y = resize_axis(&y, 2, factor);
    resize_axis(&y, 3, factor)
}

pub fn upsample_trilinear_backward<T: Scalar>(gy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let g = resize_axis_adjoint(gy, 3, factor);
    let g = resize_axis_adjoint(&g, 2, factor);
    resize_axis_adjoint(&g, 1, factor)
}

// ---------------------------------------------------------------------------
// Sequential container over batches

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv(Conv3d),
    Norm(Norm),
    LeakyRelu(f64),
    Flatten,
    Linear(Linear),
    Upsample(usize),
    Sigmoid,
}

/// Inputs to every op of one recorded pass; `acts[i]` feeds op `i`,
/// `acts[len]` is the output.
#[derive(Clone, Debug)]
pub struct SeqTrace<T> {
    pub acts: Vec<Vec<Tensor<T>>>,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    pub ops: Vec<Op>,
}

fn sum_grads<T: Scalar>(per_sample: Vec<Grads<T>>) -> Grads<T> {
    let mut iter = per_sample.into_iter();
    let mut acc = match iter.next() {
        Some(first) => first,
        None => return Vec::new(),
    };
    for grads in iter {
        for ((ia, a), (ib, b)) in acc.iter_mut().zip(grads) {
            debug_assert_eq!(*ia, ib);
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }
    acc
}

impl Sequential {
    pub fn push(&mut self, op: Op) {
        self.ops.push(op);
    }

    /// Runs the ops; returns the trace (inputs of every op plus output) and
    /// any running-statistic updates.
    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        input: Vec<Tensor<T>>,
        mode: Mode,
    ) -> (SeqTrace<T>, Grads<T>) {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut stat_updates = Vec::new();
        acts.push(input);
        for op in &self.ops {
            let x = acts.last().expect("non-empty");
            let y: Vec<Tensor<T>> = match op {
                Op::Conv(c) => x.par_iter().map(|t| c.forward(ps, t)).collect(),
                Op::Norm(n) => {
                    let (y, upd) = n.forward(ps, x, mode);
                    stat_updates.extend(upd);
                    y
                }
                Op::LeakyRelu(s) => x.par_iter().map(|t| leaky_relu(t, T::of(*s))).collect(),
                Op::Flatten => x
                    .iter()
                    .map(|t| Tensor::from_vec(&[t.len()], t.data.clone()))
                    .collect(),
                Op::Linear(l) => x.par_iter().map(|t| l.forward(ps, t)).collect(),
                Op::Upsample(f) => x.par_iter().map(|t| upsample_trilinear(t, *f)).collect(),
                Op::Sigmoid => x.par_iter().map(sigmoid).collect(),
            };
            acts.push(y);
        }
        (SeqTrace { acts, mode }, stat_updates)
    }

    /// Accumulates parameter gradients into `ps` and returns the gradient
    /// with respect to the input when requested.
    pub fn backward<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        trace: &SeqTrace<T>,
        grad_out: Vec<Tensor<T>>,
        need_input_grad: bool,
    ) -> Option<Vec<Tensor<T>>> {
        let mut g = grad_out;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let need_gx = need_input_grad || i > 0;
            let shared: &ParamStore<T> = ps;
            let (grads, gx): (Grads<T>, Option<Vec<Tensor<T>>>) = match op {
                Op::Conv(c) => {
                    let per: Vec<(Grads<T>, Option<Tensor<T>>)> = x
                        .par_iter()
                        .zip(g.par_iter())
                        .map(|(xs, gs)| c.backward(shared, xs, gs, need_gx))
                        .collect();
                    let (gr, gx): (Vec<_>, Vec<_>) = per.into_iter().unzip();
                    (sum_grads(gr), gx.into_iter().collect())
                }
                Op::Linear(l) => {
                    let per: Vec<(Grads<T>, Option<Tensor<T>>)> = x
                        .par_iter()
                        .zip(g.par_iter())
                        .map(|(xs, gs)| l.backward(shared, xs, gs, need_gx))
                        .collect();
                    let (gr, gx): (Vec<_>, Vec<_>) = per.into_iter().unzip();
                    (sum_grads(gr), gx.into_iter().collect())
                }
                Op::Norm(n) => {
                    let (gr, gx) = n.backward(shared, x, &g, trace.mode);
                    (gr, Some(gx))
                }
                Op::LeakyRelu(s) => (
                    Vec::new(),
                    Some(
                        x.par_iter()
                            .zip(g.par_iter())
                            .map(|(xs, gs)| leaky_relu_backward(xs, gs, T::of(*s)))
                            .collect(),
                    ),
                ),
                Op::Flatten => (
                    Vec::new(),
                    Some(
                        x.iter()
                            .zip(&g)
                            .map(|(xs, gs)| Tensor::from_vec(&xs.shape, gs.data.clone()))
                            .collect(),
                    ),
                ),
                Op::Upsample(f) => (
                    Vec::new(),
                    Some(g.par_iter().map(|gs| upsample_trilinear_backward(gs, *f)).collect()),
                ),
                Op::Sigmoid => (
                    Vec::new(),
                    Some(
                        y.par_iter()
                            .zip(g.par_iter())
                            .map(|(ys, gs)| sigmoid_backward(ys, gs))
                            .collect(),
                    ),
                ),
            };
            for (idx, gr) in grads {
                ps.accumulate_grad(idx, &gr);
            }
            match gx {
                Some(gx) if need_gx => g = gx,
                _ => return None,
            }
        }
        Some(g)
    }
}
