use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{mm, mm_nt, mm_tn};
use super::{numel, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |_, g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |_, g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let ga = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * k).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, g| vec![Some(g.iter().map(|v| v * k).collect())],
        )
    }

    /// `self + other` where `other`'s shape is a trailing suffix of `self`'s
    /// (bias vectors, positional tables).
    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let (s, o) = (self.shape(), other.shape());
        if o.len() > s.len() || s[s.len() - o.len()..] != *o {
            return Err(Error::Dimension(format!(
                "add_broadcast: {o:?} is not a suffix of {s:?}"
            )));
        }
        let inner = other.numel();
        let data = self
            .data()
            .chunks(inner)
            .flat_map(|c| c.iter().zip(other.data()).map(|(a, b)| a + b))
            .collect();
        Ok(Tensor::from_op(
            "add_broadcast",
            s.to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let mut gb = vec![0.0; inner];
                for c in g.chunks(inner) {
                    gb.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        ))
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum();
        Tensor::from_op("sum", Vec::new(), vec![s], vec![self.clone()], move |_, g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op("mean", Vec::new(), vec![s], vec![self.clone()], move |_, g| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!("mean_axis: axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op(
            "mean_axis",
            out_shape,
            data,
            vec![self.clone()],
            move |_, g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        dst.iter_mut()
                            .zip(&g[o * inner..(o + 1) * inner])
                            .for_each(|(d, g)| *d = g * inv);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// 2-D matrix product `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::Dimension(format!(
                "matmul: cannot multiply {a:?} by {b:?}"
            )));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = mm(self.data(), other.data(), m, k, n);
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let ga = lhs
                    .requires_grad()
                    .then(|| mm_nt(g, rhs.data(), m, n, k));
                let gb = rhs
                    .requires_grad()
                    .then(|| mm_tn(lhs.data(), g, k, m, n));
                vec![ga, gb]
            },
        ))
    }

    /// Batched product `[B×m×k] · [B×k×n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
            return Err(Error::Dimension(format!("bmm: cannot multiply {a:?} by {b:?}")));
        }
        let (bs, m, k, n) = (a[0], a[1], a[2], b[2]);
        let mut data = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            data.extend(mm(
                &self.data()[i * m * k..(i + 1) * m * k],
                &other.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "bmm",
            vec![bs, m, n],
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let ga = lhs.requires_grad().then(|| {
                    let mut out = Vec::with_capacity(bs * m * k);
                    for i in 0..bs {
                        out.extend(mm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &rhs.data()[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                        ));
                    }
                    out
                });
                let gb = rhs.requires_grad().then(|| {
                    let mut out = Vec::with_capacity(bs * k * n);
                    for i in 0..bs {
                        out.extend(mm_tn(
                            &lhs.data()[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            k,
                            m,
                            n,
                        ));
                    }
                    out
                });
                vec![ga, gb]
            },
        ))
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "reshape: {:?} cannot become {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            |_, g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorder axes; `axes[i]` is the source axis of output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let r = shape.len();
        let mut check = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || core::mem::replace(&mut check[a], true)) {
            return Err(Error::Dimension(format!("permute: {axes:?} for rank {r}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src_strides = strides(shape);
        // stride in the source for each output axis
        let walk: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let map = permutation_map(&out_shape, &walk);
        let data: Vec<f64> = map.iter().map(|&s| self.data()[s]).collect();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            move |_, g| {
                let mut gx = vec![0.0; g.len()];
                for (o, &s) in map.iter().enumerate() {
                    gx[s] = g[o];
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::Dimension(format!(
                "transpose_last2: rank-3 tensor expected, got {:?}",
                self.shape()
            )));
        }
        self.permute(&[0, 2, 1])
    }

    /// Concatenate along the last axis; leading extents must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_last: nothing to concatenate".into()))?;
        let lead = &first.shape()[..first.rank() - 1];
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
                return Err(Error::Dimension(format!(
                    "concat_last: {:?} does not match {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let parents: Vec<Tensor> = parts.iter().map(|&p| p.clone()).collect();
        Ok(Tensor::from_op("concat_last", shape, data, parents, move |_, g| {
            let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (o, &w) in out.iter_mut().zip(&widths) {
                    o.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        }))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() || len == 0 || start + len > shape[0] {
            return Err(Error::Dimension(format!(
                "narrow0: rows {start}..{} of {shape:?}",
                start + len
            )));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.data()[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        let total = self.numel();
        Ok(Tensor::from_op("narrow0", out_shape, data, vec![self.clone()], move |_, g| {
            let mut gx = vec![0.0; total];
            gx[start * inner..(start + len) * inner].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    /// `[B×N] ⊕ [B×N] -> [B×N×N]` with `out[b,i,j] = self[b,i] + other[b,j]`.
    pub fn outer_add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("outer_add", self, other)?;
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "outer_add: rank-2 operands expected, got {:?}",
                self.shape()
            )));
        }
        let (b, n) = (self.shape()[0], self.shape()[1]);
        let mut data = Vec::with_capacity(b * n * n);
        for bi in 0..b {
            let rows = &self.data()[bi * n..(bi + 1) * n];
            let cols = &other.data()[bi * n..(bi + 1) * n];
            for &r in rows {
                data.extend(cols.iter().map(|c| r + c));
            }
        }
        Ok(Tensor::from_op(
            "outer_add",
            vec![b, n, n],
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let mut ga = vec![0.0; b * n];
                let mut gb = vec![0.0; b * n];
                for bi in 0..b {
                    for i in 0..n {
                        for j in 0..n {
                            let v = g[(bi * n + i) * n + j];
                            ga[bi * n + i] += v;
                            gb[bi * n + j] += v;
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    /// Affine map over the last axis: `[..., in] · W[in×out] + b[out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let shape = self.shape();
        let Some(&width) = shape.last() else {
            return Err(Error::Dimension("linear: scalar input".into()));
        };
        if weight.rank() != 2 || weight.shape()[0] != width {
            return Err(Error::Dimension(format!(
                "linear: input {shape:?} against weight {:?}",
                weight.shape()
            )));
        }
        let rows = self.numel() / width;
        let out = self.reshape(&[rows, width])?.matmul(weight)?;
        let out = match bias {
            Some(b) => out.add_broadcast(b)?,
            None => out,
        };
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = weight.shape()[1];
        out.reshape(&out_shape)
    }
}

/// Source flat index for every output position of a strided view.
fn permutation_map(out_shape: &[usize], walk: &[usize]) -> Vec<usize> {
    let total = numel(out_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            src += walk[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= walk[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}
