//! Scaled dot-product and multi-head self-attention.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Projection weights of one attention layer. Weights are `[D, D]` with
/// `y = x·W + b`; the per-head projections are contiguous column blocks.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// `softmax(Q·Kᵀ / √d_k)·V` over the last two axes; leading axes are batch.
pub fn attention_head(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() < 2 || sk.len() != sq.len() || sv.len() != sq.len() {
        return Err(Error::Shape(format!(
            "attention operands must share rank >= 2: Q {sq:?}, K {sk:?}, V {sv:?}"
        )));
    }
    let r = sq.len();
    if sq[r - 1] != sk[r - 1] || sk[r - 2] != sv[r - 2] || sq[..r - 2] != sk[..r - 2] || sk[..r - 2] != sv[..r - 2] {
        return Err(Error::Shape(format!(
            "attention extent mismatch: Q {sq:?}, K {sk:?}, V {sv:?}"
        )));
    }
    let d_k = sk[r - 1] as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / d_k.sqrt());
    let weights = tape.softmax(scaled, r - 1)?;
    tape.matmul(weights, v)
}

/// Multi-head self-attention of `x: [.., n, D]` with `heads` heads:
/// per-head Q/K/V projections of width `D / heads`, independent
/// [`attention_head`]s, concatenation, then the output projection.
pub fn multi_head(tape: &mut Tape, x: Var, p: &AttentionParams, heads: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("multi_head expects [.., n, D], got {shape:?}")));
    }
    let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "hidden size {d} is not divisible by {heads} heads"
        )));
    }
    let dk = d / heads;
    let batch: usize = shape[..shape.len() - 2].iter().product();
    let x3 = tape.reshape(x, &[batch, n, d])?;

    let split = |tape: &mut Tape, w: Var, b: Var| -> Result<Var> {
        let y = tape.linear(x3, w, b)?;
        let y = tape.reshape(y, &[batch, n, heads, dk])?;
        tape.permute(y, &[0, 2, 1, 3])
    };
    let q = split(tape, p.wq, p.bq)?;
    let k = split(tape, p.wk, p.bk)?;
    let v = split(tape, p.wv, p.bv)?;

    let heads_out = attention_head(tape, q, k, v)?;
    let merged = tape.permute(heads_out, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, &[batch, n, d])?;
    let out = tape.linear(merged, p.wo, p.bo)?;
    tape.reshape(out, &shape)
}
