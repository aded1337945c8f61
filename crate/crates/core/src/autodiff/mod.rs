//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Tape`]; node ids ([`Var`]) are
//! handed back to the caller. [`Tape::backward`] walks the tape once in
//! reverse, so a node that feeds several consumers receives the sum of their
//! contributions. A training step builds one tape, harvests parameter
//! gradients from it, and drops it.

mod backward;
mod ops;

/// Raw kernels shared with non-recorded code paths.
pub(crate) mod ops_support {
    pub(crate) use super::ops::permute_data;
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Offsets of the operand matrices for every output batch of a matmul.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `(a_matrix_index, b_matrix_index)` per output matrix.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    MatMul {
        a: Var,
        b: Var,
        plan: MatmulPlan,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    BroadcastBatch {
        a: Var,
        n: usize,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// The value of `v` with its gradient attached, as a standalone tensor.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let mut t = node.value.clone().with_requires_grad(node.requires_grad);
        t.set_grad(node.grad.clone())
            .expect("node gradient has the node's shape");
        t
    }

    /// Back-propagates from the scalar `loss`, replacing any gradients left
    /// by an earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(out_grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = backward::node_vjp(&self.nodes, i, &out_grad);
            self.nodes[i].grad = Some(out_grad);
            for (input, g) in contributions {
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }
}
