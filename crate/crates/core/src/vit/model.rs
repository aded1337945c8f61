use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head, AttentionParams};
use super::config::{parameter_count, ViTConfig};
use super::names;
use super::patch::patchify_on;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{BoundParams, ParamStore, Parameter};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Standard deviation of the normal initializer for projection weights.
pub const INIT_STD: f64 = 0.02;

/// Where inside an encoder block an activation is tapped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationSite {
    /// Normalized tokens entering the attention sublayer. Patch tokens reach
    /// the class token through this block's attention, so their gradients
    /// are nonzero even in the final block.
    #[default]
    AttentionInput,
    /// Output of the attention sublayer before it is added back to the
    /// residual stream.
    Attention,
    /// The residual stream right after the attention sublayer is added.
    AttentionResidual,
}

/// Tap on one block's activation during [`ViTModel::forward_on`].
///
/// When `offset` is set it is added to the tapped activation, which lets a
/// caller perturb the activation for finite-difference checks.
#[derive(Clone, Debug)]
pub struct Probe {
    pub layer: usize,
    pub site: ActivationSite,
    pub offset: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// The tapped activation, `[B, N+1, D]`, when a probe was supplied.
    pub probed: Option<Var>,
}

/// Tape handles to one encoder block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub norm1_gamma: Var,
    pub norm1_beta: Var,
    pub attn: AttentionParams,
    pub norm2_gamma: Var,
    pub norm2_beta: Var,
    pub mlp_in_w: Var,
    pub mlp_in_b: Var,
    pub mlp_out_w: Var,
    pub mlp_out_b: Var,
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `+ MLP(LN(·))` with GELU.
///
/// `tap` sees the attention input, the attention output and the
/// post-attention residual, and may substitute any of them.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    p: &BlockParams,
    heads: usize,
    tap: &mut dyn FnMut(&mut Tape, ActivationSite, Var) -> Result<Var>,
) -> Result<Var> {
    let h = tape.layer_norm(x, p.norm1_gamma, p.norm1_beta, LAYER_NORM_EPS)?;
    let h = tap(tape, ActivationSite::AttentionInput, h)?;
    let attn = multi_head(tape, h, &p.attn, heads)?;
    let attn = tap(tape, ActivationSite::Attention, attn)?;
    let x1 = tape.add(x, attn)?;
    let x1 = tap(tape, ActivationSite::AttentionResidual, x1)?;
    let h2 = tape.layer_norm(x1, p.norm2_gamma, p.norm2_beta, LAYER_NORM_EPS)?;
    let hidden = tape.linear(h2, p.mlp_in_w, p.mlp_in_b)?;
    let hidden = tape.gelu(hidden);
    let mlp = tape.linear(hidden, p.mlp_out_w, p.mlp_out_b)?;
    tape.add(x1, mlp)
}

/// A vision transformer: patch projection, class token, learned position
/// embeddings, `layers` pre-norm encoder blocks, a final layer norm and a
/// linear head on the class token.
#[derive(Clone, Debug, PartialEq)]
pub struct ViTModel {
    config: ViTConfig,
    params: ParamStore,
}

/// Canonical `(name, shape)` list for `config`, in storage order.
pub fn parameter_shapes(config: &ViTConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden_size;
    let m = config.mlp_size;
    let mut out = vec![
        (names::PROJ_W.to_string(), vec![config.patch_dim(), d]),
        (names::PROJ_B.to_string(), vec![d]),
        (names::CLS.to_string(), vec![1, d]),
        (names::POS.to_string(), vec![config.seq_len(), d]),
    ];
    for i in 0..config.layers {
        let b = |s: &str| names::block(i, s);
        out.extend([
            (b(names::NORM1_GAMMA), vec![d]),
            (b(names::NORM1_BETA), vec![d]),
            (b(names::WQ), vec![d, d]),
            (b(names::BQ), vec![d]),
            (b(names::WK), vec![d, d]),
            (b(names::BK), vec![d]),
            (b(names::WV), vec![d, d]),
            (b(names::BV), vec![d]),
            (b(names::WO), vec![d, d]),
            (b(names::BO), vec![d]),
            (b(names::NORM2_GAMMA), vec![d]),
            (b(names::NORM2_BETA), vec![d]),
            (b(names::MLP_IN_W), vec![d, m]),
            (b(names::MLP_IN_B), vec![m]),
            (b(names::MLP_OUT_W), vec![m, d]),
            (b(names::MLP_OUT_B), vec![d]),
        ]);
    }
    out.extend([
        (names::NORM_GAMMA.to_string(), vec![d]),
        (names::NORM_BETA.to_string(), vec![d]),
        (names::HEAD_W.to_string(), vec![d, config.num_classes]),
        (names::HEAD_B.to_string(), vec![config.num_classes]),
    ]);
    out
}

/// Initial value for a parameter: normal(0.02) for weight matrices, ones
/// for norm scales, zeros for everything else.
pub(crate) fn init_tensor(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    if names::is_weight_matrix(name) {
        Tensor::randn(shape.to_vec(), INIT_STD, rng)
    } else if name.ends_with(".gamma") {
        Tensor::ones(shape.to_vec())
    } else {
        Tensor::zeros(shape.to_vec())
    }
}

impl ViTModel {
    /// Freshly initialized model; identical seeds give identical weights.
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let t = init_tensor(&name, &shape, &mut rng);
            params.insert(Parameter::new(name, t))?;
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing parameter set after checking it against `config`.
    pub fn from_params(config: ViTConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(params.iter()) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn parameter_count(&self) -> u64 {
        self.params.numel() as u64
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.tensor)
    }

    /// Overwrites the values of parameter `name` (shape must match).
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        if p.tensor.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, got {:?}",
                p.tensor.shape(),
                value.shape()
            )));
        }
        p.tensor = value.with_requires_grad(true);
        Ok(())
    }

    fn var(&self, bound: &BoundParams, name: &str) -> Var {
        bound.var(
            self.params
                .position(name)
                .unwrap_or_else(|| panic!("model has no parameter {name}")),
        )
    }

    pub fn block_params(&self, bound: &BoundParams, layer: usize) -> BlockParams {
        let v = |s: &str| self.var(bound, &names::block(layer, s));
        BlockParams {
            norm1_gamma: v(names::NORM1_GAMMA),
            norm1_beta: v(names::NORM1_BETA),
            attn: AttentionParams {
                wq: v(names::WQ),
                bq: v(names::BQ),
                wk: v(names::WK),
                bk: v(names::BK),
                wv: v(names::WV),
                bv: v(names::BV),
                wo: v(names::WO),
                bo: v(names::BO),
            },
            norm2_gamma: v(names::NORM2_GAMMA),
            norm2_beta: v(names::NORM2_BETA),
            mlp_in_w: v(names::MLP_IN_W),
            mlp_in_b: v(names::MLP_IN_B),
            mlp_out_w: v(names::MLP_OUT_W),
            mlp_out_b: v(names::MLP_OUT_B),
        }
    }

    /// Projects `[B, N, P²C]` patch rows to `D`, prepends the class token and
    /// adds position embeddings, giving `[B, N+1, D]`.
    pub fn embed_on(&self, tape: &mut Tape, bound: &BoundParams, patches: Var) -> Result<Var> {
        let c = &self.config;
        let shape = tape.shape(patches).to_vec();
        let &[b, n, width] = shape.as_slice() else {
            return Err(Error::Shape(format!("embed expects [B, N, P²C], got {shape:?}")));
        };
        if width != c.patch_dim() {
            return Err(Error::Shape(format!(
                "patch rows have width {width}, model expects {}",
                c.patch_dim()
            )));
        }
        if n != c.num_patches() {
            return Err(Error::Shape(format!(
                "{n} patches given, position embeddings cover {}",
                c.num_patches()
            )));
        }
        let proj = tape.linear(
            patches,
            self.var(bound, names::PROJ_W),
            self.var(bound, names::PROJ_B),
        )?;
        let cls = tape.reshape(self.var(bound, names::CLS), &[1, 1, c.hidden_size])?;
        let cls = tape.broadcast_batch(cls, b)?;
        let tokens = tape.concat(&[cls, proj], 1)?;
        tape.add(tokens, self.var(bound, names::POS))
    }

    /// Untracked [`embed_on`](Self::embed_on) for `[N, P²C]` or `[B, N, P²C]`.
    pub fn embed(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let squeeze = patches.rank() == 2;
        let input = if squeeze {
            let s = patches.shape();
            patches.reshape([1, s[0], s[1]])?
        } else {
            patches.clone()
        };
        let v = tape.constant(input);
        let out = self.embed_on(&mut tape, &bound, v)?;
        let out = tape.value(out).clone().with_requires_grad(false);
        if squeeze {
            let s = out.shape().to_vec();
            out.reshape([s[1], s[2]])
        } else {
            Ok(out)
        }
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        let &[_, h, w, ch] = shape else {
            return Err(Error::Shape(format!("expected a [B, H, W, C] batch, got {shape:?}")));
        };
        if h != c.image_resolution || w != c.image_resolution {
            return Err(Error::Shape(format!(
                "batch resolution {h}x{w} does not match model resolution {0}x{0}",
                c.image_resolution
            )));
        }
        if ch != c.channels {
            return Err(Error::Shape(format!(
                "batch has {ch} channels, model expects {}",
                c.channels
            )));
        }
        Ok(())
    }

    /// Records the full forward pass of a `[B, H, W, C]` batch and returns
    /// the `[B, num_classes]` logits.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: Var,
        probe: Option<&Probe>,
    ) -> Result<ForwardOutput> {
        self.check_batch(tape.shape(batch))?;
        let c = &self.config;
        if let Some(p) = probe {
            if p.layer >= c.layers {
                return Err(Error::Index(format!(
                    "probe layer {} out of range for {} layers",
                    p.layer, c.layers
                )));
            }
        }
        let b = tape.shape(batch)[0];
        let patches = patchify_on(tape, batch, c.patch_size)?;
        let mut x = self.embed_on(tape, bound, patches)?;
        let mut probed = None;
        for layer in 0..c.layers {
            let bp = self.block_params(bound, layer);
            let mut tap = |tape: &mut Tape, site: ActivationSite, v: Var| -> Result<Var> {
                let Some(p) = probe.filter(|p| p.layer == layer && p.site == site) else {
                    return Ok(v);
                };
                let v = match &p.offset {
                    Some(off) => {
                        let off = tape.constant(off.clone());
                        tape.add(v, off)?
                    }
                    None => v,
                };
                probed = Some(v);
                Ok(v)
            };
            x = encoder_block(tape, x, &bp, c.heads, &mut tap)?;
        }
        let x = tape.layer_norm(
            x,
            self.var(bound, names::NORM_GAMMA),
            self.var(bound, names::NORM_BETA),
            LAYER_NORM_EPS,
        )?;
        let cls = tape.narrow(x, 1, 0, 1)?;
        let cls = tape.reshape(cls, &[b, c.hidden_size])?;
        let logits = tape.linear(
            cls,
            self.var(bound, names::HEAD_W),
            self.var(bound, names::HEAD_B),
        )?;
        Ok(ForwardOutput { logits, probed })
    }

    /// Logits for a `[B, H, W, C]` batch, without keeping the graph.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch.shape())?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let input = tape.constant(batch.clone());
        let out = self.forward_on(&mut tape, &bound, input, None)?;
        Ok(tape.value(out.logits).clone().with_requires_grad(false))
    }

    /// Replaces the classifier with a fresh `D → num_classes` layer, keeping
    /// every other parameter.
    pub fn fine_tune_head(&self, num_classes: usize, seed: u64) -> Result<ViTModel> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let config = self.config.with_classes(num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let t = if names::is_head(&name) {
                init_tensor(&name, &shape, &mut rng)
            } else {
                self.params
                    .get(&name)
                    .expect("non-head parameters are shared across class counts")
                    .tensor
                    .clone()
            };
            params.insert(Parameter::new(name, t))?;
        }
        debug_assert_eq!(params.numel() as u64, parameter_count(&config));
        Ok(ViTModel { config, params })
    }
}

/// Free-function form of [`ViTModel::fine_tune_head`].
pub fn fine_tune_head(model: &ViTModel, num_classes: usize, seed: u64) -> Result<ViTModel> {
    model.fine_tune_head(num_classes, seed)
}
