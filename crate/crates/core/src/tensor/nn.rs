use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// tanh approximation
    Gelu,
    LeakyRelu(f64),
}

impl Activation {
    /// Accepts `relu`, `gelu`, `leaky_relu` (slope 0.01) or `leaky_relu:<slope>`.
    pub fn parse(kind: &str) -> Result<Self> {
        match kind {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "leaky_relu" => Ok(Activation::LeakyRelu(0.01)),
            other => {
                if let Some(slope) = other.strip_prefix("leaky_relu:") {
                    let s: f64 = slope
                        .parse()
                        .map_err(|_| Error::Config(format!("bad leaky_relu slope {slope:?}")))?;
                    return Ok(Activation::LeakyRelu(s));
                }
                Err(Error::Config(format!("unknown activation {other:?}")))
            }
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x))),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = math::tanh(GELU_C * (x + GELU_A * x * x * x));
                0.5 * (1.0 + t)
                    + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

fn expect_rank(op: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Dimension(format!(
            "{op}: rank-{rank} tensor expected, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn out_extent(op: &str, input: usize, pad: usize, k: usize, stride: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::Geometry(format!("{op}: zero kernel or stride")));
    }
    let span = input + 2 * pad;
    if k > span {
        return Err(Error::Geometry(format!(
            "{op}: window {k} larger than padded input {span}"
        )));
    }
    Ok((span - k) / stride + 1)
}

impl Tensor {
    /// 2-D cross-correlation: `x[B×C×H×W] ⋆ w[F×C×kH×kW] + bias[F]`.
    pub fn conv2d(&self, w: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        expect_rank("conv2d", self, 4)?;
        expect_rank("conv2d", w, 4)?;
        let (b, c, h, wd) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (f, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != c || bias.shape() != [f] {
            return Err(Error::Dimension(format!(
                "conv2d: input {:?}, kernel {:?}, bias {:?}",
                self.shape(),
                w.shape(),
                bias.shape()
            )));
        }
        for (ext, k) in [(h, kh), (wd, kw)] {
            if stride == 0 || (ext + 2 * padding) < k || !(ext + 2 * padding - k).is_multiple_of(stride) {
                return Err(Error::Geometry(format!(
                    "conv2d: extent {ext} with kernel {k}, padding {padding}, stride {stride} \
                     gives a non-integer output extent"
                )));
            }
        }
        let oh = out_extent("conv2d", h, padding, kh, stride)?;
        let ow = out_extent("conv2d", wd, padding, kw, stride)?;
        let g = ConvGeom { b, c, h, w: wd, f, kh, kw, oh, ow, stride, pad: padding };
        let data = g.forward(self.data(), w.data(), bias.data());
        let (x, k) = (self.clone(), w.clone());
        Ok(Tensor::from_op(
            "conv2d",
            vec![b, f, oh, ow],
            data,
            vec![self.clone(), w.clone(), bias.clone()],
            move |_, grad| {
                let gx = x.requires_grad().then(|| g.grad_input(grad, k.data()));
                let gw = k.requires_grad().then(|| g.grad_kernel(grad, x.data()));
                let mut gb = vec![0.0; g.f];
                let plane = g.oh * g.ow;
                for bi in 0..g.b {
                    for fi in 0..g.f {
                        let o = (bi * g.f + fi) * plane;
                        gb[fi] += grad[o..o + plane].iter().sum::<f64>();
                    }
                }
                vec![gx, gw, Some(gb)]
            },
        ))
    }

    /// Max pooling over `k×k` windows. Gradient goes to the first maximum in
    /// row-major scan order.
    pub fn max_pool2d(&self, k: usize, stride: usize) -> Result<Tensor> {
        expect_rank("max_pool2d", self, 4)?;
        let (b, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let oh = out_extent("max_pool2d", h, 0, k, stride)?;
        let ow = out_extent("max_pool2d", w, 0, k, stride)?;
        let x = self.data();
        let mut data = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = base + i * stride * w + j * stride;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (i * stride + di) * w + j * stride + dj;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    data.push(best);
                    argmax.push(at);
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            "max_pool2d",
            vec![b, c, oh, ow],
            data,
            vec![self.clone()],
            move |_, g| {
                let mut gx = vec![0.0; total];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&self) -> Tensor {
        let n = *self.shape().last().unwrap_or(&1);
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_row(row, None);
        }
        Tensor::from_op("softmax", self.shape().to_vec(), data, vec![self.clone()], move |y, g| {
            vec![Some(softmax_backward(y, g, n))]
        })
    }

    /// Softmax over the last axis of `[..., N, N]` restricted to entries where
    /// `mask[i*N + j]` holds. Masked entries are exactly zero.
    pub fn masked_softmax(&self, mask: Rc<[bool]>) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 || self.shape()[r - 1] != self.shape()[r - 2] {
            return Err(Error::Dimension(format!(
                "masked_softmax: square trailing block expected, got {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[r - 1];
        if mask.len() != n * n {
            return Err(Error::Dimension(format!(
                "masked_softmax: mask of {} entries for {n}x{n} block",
                mask.len()
            )));
        }
        let mut data = self.data().to_vec();
        for (ri, row) in data.chunks_mut(n).enumerate() {
            let i = ri % n;
            softmax_row(row, Some(&mask[i * n..(i + 1) * n]));
        }
        Ok(Tensor::from_op(
            "masked_softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |y, g| vec![Some(softmax_backward(y, g, n))],
        ))
    }

    /// Normalize each last-axis slice to zero mean and unit population
    /// variance, then apply `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().unwrap_or(&1);
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: input {:?}, gamma {:?}, beta {:?}",
                self.shape(),
                gamma.shape(),
                beta.shape()
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm: eps must be positive, got {eps}")));
        }
        let rows = self.numel() / d;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std.push(is);
            xhat.extend(row.iter().map(|v| (v - mean) * is));
        }
        let data: Vec<f64> = xhat
            .chunks(d)
            .flat_map(|r| {
                r.iter()
                    .zip(gamma.data())
                    .zip(beta.data())
                    .map(|((x, g), b)| x * g + b)
            })
            .collect();
        let gm = gamma.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |_, g| {
                let mut gx = Vec::with_capacity(g.len());
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for ((gr, xr), is) in g.chunks(d).zip(xhat.chunks(d)).zip(&inv_std) {
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for j in 0..d {
                        let dx = gr[j] * gm.data()[j];
                        mean_dx += dx;
                        mean_dx_x += dx * xr[j];
                        gg[j] += gr[j] * xr[j];
                        gb[j] += gr[j];
                    }
                    mean_dx /= d as f64;
                    mean_dx_x /= d as f64;
                    for j in 0..d {
                        let dx = gr[j] * gm.data()[j];
                        gx.push(is * (dx - mean_dx - xr[j] * mean_dx_x));
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        ))
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        let data = self.data().iter().map(|&v| kind.apply(v)).collect();
        let x = self.clone();
        Tensor::from_op("activation", self.shape().to_vec(), data, vec![self.clone()], move |_, g| {
            vec![Some(
                g.iter()
                    .zip(x.data())
                    .map(|(g, &v)| g * kind.derivative(v))
                    .collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    pub fn gelu(&self) -> Tensor {
        self.activation(Activation::Gelu)
    }

    /// Inverted dropout. Element `i` is dropped when draw `i` of `rng` falls
    /// below `p`, so masks do not depend on evaluation order.
    pub fn dropout(&self, p: f64, training: bool, rng: &RngStream) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|i| if rng.unit_at(i as u64) < p { 0.0 } else { keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op("dropout", self.shape().to_vec(), data, vec![self.clone()], move |_, g| {
            vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]
        }))
    }

    /// Mean cross-entropy of `[B×K]` logits against integer labels, via
    /// log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        expect_rank("cross_entropy", self, 2)?;
        let (b, k) = (self.shape()[0], self.shape()[1]);
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for batch of {b}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = self.data().to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + math::ln(row.iter().map(|v| math::exp(v - m)).sum::<f64>());
            loss += lse - row[l];
            softmax_row(row, None);
        }
        loss /= b as f64;
        let labels: Vec<usize> = labels.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            Vec::new(),
            vec![loss],
            vec![self.clone()],
            move |_, g| {
                let s = g[0] / b as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (i, &l) in labels.iter().enumerate() {
                    gx[i * k + l] -= s;
                }
                vec![Some(gx)]
            },
        ))
    }
}

fn softmax_row(row: &mut [f64], mask: Option<&[bool]>) {
    let live = |j: usize| mask.is_none_or(|m| m[j]);
    let mut m = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if live(j) && v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut s = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if live(j) {
            *v = math::exp(*v - m);
            s += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn softmax_backward(y: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut gx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(n).zip(g.chunks(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        gx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
    }
    gx
}

#[derive(Clone, Copy)]
struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Input column for output column `o` and kernel offset `k`, if in range.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    fn forward(&self, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let plane = self.oh * self.ow;
        let mut out = vec![0.0; self.b * self.f * plane];
        for bi in 0..self.b {
            for fi in 0..self.f {
                let o = &mut out[(bi * self.f + fi) * plane..(bi * self.f + fi + 1) * plane];
                o.iter_mut().for_each(|v| *v = bias[fi]);
                for ci in 0..self.c {
                    let xin = &x[(bi * self.c + ci) * self.h * self.w..][..self.h * self.w];
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let wv = w[((fi * self.c + ci) * self.kh + ki) * self.kw + kj];
                            if wv == 0.0 {
                                continue;
                            }
                            for i in 0..self.oh {
                                let Some(si) = self.src(i, ki, self.h) else { continue };
                                let orow = &mut o[i * self.ow..(i + 1) * self.ow];
                                let xrow = &xin[si * self.w..(si + 1) * self.w];
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    if let Some(sj) = self.src(j, kj, self.w) {
                                        *ov += wv * xrow[sj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input(&self, g: &[f64], w: &[f64]) -> Vec<f64> {
        let plane = self.oh * self.ow;
        let mut gx = vec![0.0; self.b * self.c * self.h * self.w];
        for bi in 0..self.b {
            for fi in 0..self.f {
                let go = &g[(bi * self.f + fi) * plane..][..plane];
                for ci in 0..self.c {
                    let gxin = &mut gx[(bi * self.c + ci) * self.h * self.w..][..self.h * self.w];
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let wv = w[((fi * self.c + ci) * self.kh + ki) * self.kw + kj];
                            if wv == 0.0 {
                                continue;
                            }
                            for i in 0..self.oh {
                                let Some(si) = self.src(i, ki, self.h) else { continue };
                                for j in 0..self.ow {
                                    if let Some(sj) = self.src(j, kj, self.w) {
                                        gxin[si * self.w + sj] += wv * go[i * self.ow + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    fn grad_kernel(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        let plane = self.oh * self.ow;
        let mut gw = vec![0.0; self.f * self.c * self.kh * self.kw];
        for bi in 0..self.b {
            for fi in 0..self.f {
                let go = &g[(bi * self.f + fi) * plane..][..plane];
                for ci in 0..self.c {
                    let xin = &x[(bi * self.c + ci) * self.h * self.w..][..self.h * self.w];
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let mut acc = 0.0;
                            for i in 0..self.oh {
                                let Some(si) = self.src(i, ki, self.h) else { continue };
                                for j in 0..self.ow {
                                    if let Some(sj) = self.src(j, kj, self.w) {
                                        acc += go[i * self.ow + j] * xin[si * self.w + sj];
                                    }
                                }
                            }
                            gw[((fi * self.c + ci) * self.kh + ki) * self.kw + kj] += acc;
                        }
                    }
                }
            }
        }
        gw
    }
}

impl core::fmt::Display for Activation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Gelu => f.write_str("gelu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
        }
    }
}
