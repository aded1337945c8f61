//! Vector-Jacobian products for every [`Op`].

use super::ops::{axis_split, inverse_perm, normal_cdf, normal_pdf, permute_data};
use super::{Node, Op, Var};
use crate::tensor::{gemm_acc, transpose2};

/// Gradient contributions of node `i` to its inputs given `g = ∂L/∂out`.
pub(super) fn node_vjp(nodes: &[Node], i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let node = &nodes[i];
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;

    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add { a, b } => {
            let mut out = Vec::new();
            if wants(*a) {
                out.push((*a, g.to_vec()));
            }
            if wants(*b) {
                let n = val(*b).numel();
                let mut gb = vec![0.0; n];
                for (j, gv) in g.iter().enumerate() {
                    gb[j % n] += gv;
                }
                out.push((*b, gb));
            }
            out
        }
        Op::Mul { a, b } => {
            let mut out = Vec::new();
            if wants(*a) {
                let gb: Vec<f64> = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                out.push((*a, gb));
            }
            if wants(*b) {
                let ga: Vec<f64> = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                out.push((*b, ga));
            }
            out
        }
        Op::Scale { a, factor } => vec![(*a, g.iter().map(|x| x * factor).collect())],
        Op::MatMul { a, b, plan } => {
            let (m, k, n) = (plan.m, plan.k, plan.n);
            let ad = val(*a).data();
            let bd = val(*b).data();
            let mut out = Vec::new();
            if wants(*a) {
                let mut ga = vec![0.0; ad.len()];
                for (o, &(ia, ib)) in plan.pairs.iter().enumerate() {
                    let bt = transpose2(k, n, &bd[ib * k * n..(ib + 1) * k * n]);
                    gemm_acc(
                        m,
                        n,
                        k,
                        &g[o * m * n..(o + 1) * m * n],
                        &bt,
                        &mut ga[ia * m * k..(ia + 1) * m * k],
                    );
                }
                out.push((*a, ga));
            }
            if wants(*b) {
                let mut gb = vec![0.0; bd.len()];
                for (o, &(ia, ib)) in plan.pairs.iter().enumerate() {
                    let at = transpose2(m, k, &ad[ia * m * k..(ia + 1) * m * k]);
                    gemm_acc(
                        k,
                        m,
                        n,
                        &at,
                        &g[o * m * n..(o + 1) * m * n],
                        &mut gb[ib * k * n..(ib + 1) * k * n],
                    );
                }
                out.push((*b, gb));
            }
            out
        }
        Op::Reshape { a } => vec![(*a, g.to_vec())],
        Op::Permute { a, perm } => {
            let inv = inverse_perm(perm);
            vec![(*a, permute_data(g, node.value.shape(), &inv))]
        }
        Op::Narrow { a, axis, start } => {
            let in_shape = val(*a).shape();
            let (outer, alen, inner) = axis_split(in_shape, *axis);
            let len = node.value.shape()[*axis];
            let mut ga = vec![0.0; val(*a).numel()];
            for o in 0..outer {
                let dst = o * alen * inner + start * inner;
                let src = o * len * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![(*a, ga)]
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_split(node.value.shape(), *axis);
            let mut out = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if wants(p) {
                    let mut gp = Vec::with_capacity(val(p).numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    out.push((p, gp));
                }
                offset += len;
            }
            out
        }
        Op::BroadcastBatch { a, n } => {
            let chunk = val(*a).numel();
            let mut ga = vec![0.0; chunk];
            for r in 0..*n {
                for (x, gv) in ga.iter_mut().zip(&g[r * chunk..(r + 1) * chunk]) {
                    *x += gv;
                }
            }
            vec![(*a, ga)]
        }
        Op::Softmax { a, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        ga[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![(*a, ga)]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = val(*gamma).numel();
            let gm = val(*gamma).data();
            let rows = xhat.len() / d;
            let mut out = Vec::new();
            if wants(*x) {
                let mut gx = vec![0.0; xhat.len()];
                for r in 0..rows {
                    let gy = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_gh = 0.0;
                    let mut mean_ghx = 0.0;
                    for j in 0..d {
                        let gh = gy[j] * gm[j];
                        mean_gh += gh;
                        mean_ghx += gh * xh[j];
                    }
                    mean_gh /= d as f64;
                    mean_ghx /= d as f64;
                    for j in 0..d {
                        let gh = gy[j] * gm[j];
                        gx[r * d + j] = rstd[r] * (gh - mean_gh - xh[j] * mean_ghx);
                    }
                }
                out.push((*x, gx));
            }
            if wants(*gamma) {
                let mut gg = vec![0.0; d];
                for (j, (gv, xh)) in g.iter().zip(xhat).enumerate() {
                    gg[j % d] += gv * xh;
                }
                out.push((*gamma, gg));
            }
            if wants(*beta) {
                let mut gb = vec![0.0; d];
                for (j, gv) in g.iter().enumerate() {
                    gb[j % d] += gv;
                }
                out.push((*beta, gb));
            }
            out
        }
        Op::Gelu { a } => {
            let ga = val(*a)
                .data()
                .iter()
                .zip(g)
                .map(|(&x, gv)| gv * (normal_cdf(x) + x * normal_pdf(x)))
                .collect();
            vec![(*a, ga)]
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let classes = val(*logits).shape()[1];
            let scale = g[0] / labels.len() as f64;
            let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                gl[r * classes + l] -= scale;
            }
            vec![(*logits, gl)]
        }
        Op::Sum { a } => vec![(*a, vec![g[0]; val(*a).numel()])],
        Op::Mean { a } => {
            let n = val(*a).numel();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
    }
}
