//! Named parameters and the SGD update.

use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
        }
    }
}

/// Ordered set of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Parameter) -> Result<()> {
        if self.index.contains_key(&param.name) {
            return Err(Error::Config(format!("duplicate parameter name {}", param.name)));
        }
        self.index.insert(param.name.clone(), self.params.len());
        self.params.push(param);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn as_slice(&self) -> &[Parameter] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter as a gradient-tracking leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.tensor.clone()))
                .collect(),
        }
    }

    /// Adds the tape's gradients into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(v) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// FNV-1a over names, shapes and the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for p in &self.params {
            feed(p.name.as_bytes());
            for &d in p.tensor.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Tape handles of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, position: usize) -> Var {
        self.vars[position]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Plain SGD: `p ← p − lr·∇p`, then clears the gradients. A zero learning
/// rate leaves every value untouched.
pub fn sgd_step(params: &mut [Parameter], lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Domain(format!("learning rate must be >= 0, got {lr}")));
    }
    if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
        return Err(Error::State(format!("parameter {} has no gradient", p.name)));
    }
    for p in params.iter_mut() {
        if lr > 0.0 {
            let g = p.tensor.grad().expect("checked above").to_vec();
            for (w, gv) in p.tensor.data_mut().iter_mut().zip(&g) {
                *w -= lr * gv;
            }
        }
        p.tensor.zero_grad();
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum (`momentum = 0` is plain SGD).
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Domain(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, self.lr);
        }
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::State(format!("parameter {} has no gradient", p.name)));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        }
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            let g = p.tensor.grad().expect("checked above").to_vec();
            for ((w, v), gv) in p.tensor.data_mut().iter_mut().zip(vel.iter_mut()).zip(&g) {
                *v = self.momentum * *v + gv;
                *w -= self.lr * *v;
            }
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(params: &mut [Parameter], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: Option<f64>) -> Parameter {
        let mut p = Parameter::new("w", Tensor::full([1], v));
        if let Some(g) = g {
            p.tensor.accumulate_grad(&[g]).unwrap();
        }
        p
    }

    #[test]
    fn single_step_arithmetic() {
        let mut ps = [param(1.0, Some(0.5))];
        sgd_step(&mut ps, 0.03).unwrap();
        assert!((ps[0].tensor.data()[0] - 0.985).abs() < 1e-15);
        assert!(ps[0].tensor.grad().is_none());

        let mut ps = [param(1.0, Some(0.0))];
        sgd_step(&mut ps, 0.03).unwrap();
        assert_eq!(ps[0].tensor.data()[0], 1.0);
    }

    #[test]
    fn two_steps_on_square() {
        let mut ps = [param(1.0, None)];
        for _ in 0..2 {
            let w = ps[0].tensor.data()[0];
            ps[0].tensor.accumulate_grad(&[2.0 * w]).unwrap();
            sgd_step(&mut ps, 0.1).unwrap();
        }
        assert!((ps[0].tensor.data()[0] - 0.64).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut ps = [param(1.0, None)];
        assert!(matches!(sgd_step(&mut ps, 0.1), Err(Error::State(_))));
        let mut ps = [param(1.0, Some(1.0))];
        assert!(matches!(sgd_step(&mut ps, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sgd_is_bit_deterministic() {
        let run = || {
            let mut ps = [param(0.123456789, Some(-0.987654321))];
            sgd_step(&mut ps, 0.03).unwrap();
            ps[0].tensor.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn momentum_zero_matches_plain() {
        let mut a = [param(1.0, Some(0.5))];
        let mut b = [param(1.0, Some(0.5))];
        sgd_step(&mut a, 0.1).unwrap();
        Sgd::new(0.1, 0.0).unwrap().step(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut ps = [param(0.0, Some(1.0))];
        opt.step(&mut ps).unwrap();
        ps[0].tensor.accumulate_grad(&[1.0]).unwrap();
        opt.step(&mut ps).unwrap();
        // v1 = 1, v2 = 1.9
        assert!((ps[0].tensor.data()[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut ps = [param(0.0, Some(3.0)), param(0.0, Some(4.0))];
        ps[1].name = "v".into();
        let before = clip_grad_norm(&mut ps, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let g0 = ps[0].tensor.grad().unwrap()[0];
        let g1 = ps[1].tensor.grad().unwrap()[0];
        assert!(((g0 * g0 + g1 * g1).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn store_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.insert(Parameter::new("a", Tensor::zeros([1]))).unwrap();
        assert!(s.insert(Parameter::new("a", Tensor::zeros([1]))).is_err());
    }
}
