//! Forward rules for every recorded operation.

use std::f64::consts::SQRT_2;

use super::{MatmulPlan, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, strides, Tensor};

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

/// Standard normal density.
pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}


fn check_axis(axis: usize, shape: &[usize]) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Index(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    /// Elementwise `a + b`, where `b`'s shape must equal a trailing suffix of
    /// `a`'s shape (bias-style broadcast over the leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::Dimension {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let bd = self.value(b).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % bd.len()])
            .collect();
        let rg = self.any_grad(&[a, b]);
        let out = Tensor::from_vec(sa, data)?;
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    /// Matrix product over the last two axes. Leading (batch) axes are
    /// aligned from the right and broadcast where one side has extent 1 or
    /// lacks the axis entirely.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Dimension {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                batch.push(x);
            } else if x == 1 {
                batch.push(y);
            } else {
                return Err(mismatch());
            }
        }
        let (st_a, st_b) = (strides(&pa), strides(&pb));
        let total: usize = batch.iter().product();
        let mut pairs = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            let mut ia = 0;
            let mut ib = 0;
            for d in 0..rank {
                if pa[d] != 1 {
                    ia += idx[d] * st_a[d];
                }
                if pb[d] != 1 {
                    ib += idx[d] * st_b[d];
                }
            }
            pairs.push((ia, ib));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }

        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; total * m * n];
        for (o, &(ia, ib)) in pairs.iter().enumerate() {
            gemm_acc(
                m,
                k,
                n,
                &ad[ia * m * k..(ia + 1) * m * k],
                &bd[ib * k * n..(ib + 1) * k * n],
                &mut out[o * m * n..(o + 1) * m * n],
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let out = Tensor::from_vec(shape, out)?;
        let rg = self.any_grad(&[a, b]);
        let plan = MatmulPlan { m, k, n, pairs };
        Ok(self.push(out, Op::MatMul { a, b, plan }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape(format!(
                "invalid permutation {perm:?} for shape {shape:?}"
            )));
        }
        let data = permute_data(self.value(a).data(), &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            out,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::Shape("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis(axis, &shape)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Index(format!(
                "narrow {start}..{} out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Narrow { a, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis(axis, &base)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Repeats a tensor whose leading extent is 1 `n` times along axis 0.
    pub fn broadcast_batch(&mut self, a: Var, n: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.first() != Some(&1) || n == 0 {
            return Err(Error::Shape(format!(
                "broadcast_batch needs leading extent 1, got {shape:?}"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            data.extend_from_slice(src);
        }
        let mut out_shape = shape;
        out_shape[0] = n;
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::BroadcastBatch { a, n }, rg))
    }

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis(axis, &shape)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[at(j)] /= sum;
                }
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Softmax { a, axis }, rg))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer_norm on a scalar".into()))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + bt[j];
            }
        }
        let out = Tensor::from_vec(shape, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x * normal_cdf(x))
            .collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Gelu { a }, rg)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "cross_entropy needs [batch, classes] logits, got {shape:?}"
            )));
        }
        let (batch, classes) = (shape[0], shape[1]);
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[label];
            for j in 0..classes {
                probs[r * classes + j] = (row[j] - log_z).exp();
            }
        }
        let out = Tensor::scalar(total / batch as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean { a }, rg)
    }

    /// `x · w + b` for `x: [.., in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }
}

pub(crate) fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..src.len() {
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
