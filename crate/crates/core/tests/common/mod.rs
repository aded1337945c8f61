#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitkit::gradcheck::{max_relative_error, numeric_gradient, FD_STEP};
use vitkit::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds `sum(build(inputs) ⊙ weights)` and compares the tape gradient of
/// every input against central differences. Returns the worst relative error.
pub fn op_gradient_error<F>(inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor], grads: bool| -> (f64, Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(grads)))
            .collect();
        let out = build(&mut tape, &vars);
        let n = tape.value(out).numel();
        let shape = tape.shape(out).to_vec();
        let w = if n == 1 && shape.is_empty() {
            Tensor::scalar(1.0)
        } else {
            Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed ^ 0xabc))
        };
        let w = tape.constant(w);
        let weighted = tape.mul(out, w).expect("same shape");
        let loss = tape.sum(weighted);
        let v = tape.value(loss).item().unwrap();
        (v, tape, vars, loss)
    };

    let (_, mut tape, vars, loss) = eval(inputs, true);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let base = inputs[i].data().to_vec();
        let indices: Vec<usize> = (0..base.len()).collect();
        let numeric = numeric_gradient(
            |x| {
                let mut vals = inputs.to_vec();
                vals[i] = Tensor::from_vec(inputs[i].shape().to_vec(), x.to_vec()).unwrap();
                eval(&vals, false).0
            },
            &base,
            &indices,
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

fn extent(r: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    r.random_range(1..=8)
}

fn randn(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

type OpCase = (&'static str, fn(u64) -> f64);

/// One randomized finite-difference check per differentiable primitive.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("add (bias broadcast)", |s| {
            let mut r = rng(s);
            let (a, b) = (extent(&mut r), extent(&mut r));
            op_gradient_error(&[randn(vec![a, b], &mut r), randn(vec![b], &mut r)], s, |t, v| {
                t.add(v[0], v[1]).unwrap()
            })
        }),
        ("mul", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(
                &[randn(shape.clone(), &mut r), randn(shape, &mut r)],
                s,
                |t, v| t.mul(v[0], v[1]).unwrap(),
            )
        }),
        ("scale", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.scale(v[0], -1.7))
        }),
        ("matmul", |s| {
            let mut r = rng(s);
            let (m, k, n) = (extent(&mut r), extent(&mut r), extent(&mut r));
            op_gradient_error(
                &[randn(vec![m, k], &mut r), randn(vec![k, n], &mut r)],
                s,
                |t, v| t.matmul(v[0], v[1]).unwrap(),
            )
        }),
        ("matmul (batch broadcast)", |s| {
            let mut r = rng(s);
            let (b, m, k, n) = (extent(&mut r), extent(&mut r), extent(&mut r), extent(&mut r));
            op_gradient_error(
                &[randn(vec![b, 1, m, k], &mut r), randn(vec![3, k, n], &mut r)],
                s,
                |t, v| t.matmul(v[0], v[1]).unwrap(),
            )
        }),
        ("reshape", |s| {
            let mut r = rng(s);
            let (a, b) = (extent(&mut r), extent(&mut r));
            op_gradient_error(&[randn(vec![a, b], &mut r)], s, |t, v| {
                t.reshape(v[0], &[b * a]).unwrap()
            })
        }),
        ("permute", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| {
                t.permute(v[0], &[2, 0, 1]).unwrap()
            })
        }),
        ("transpose", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.transpose(v[0]).unwrap())
        }),
        ("narrow", |s| {
            let mut r = rng(s);
            let (a, b) = (extent(&mut r), extent(&mut r));
            op_gradient_error(&[randn(vec![a, b], &mut r)], s, |t, v| {
                let b = t.shape(v[0])[1];
                t.narrow(v[0], 1, b / 3, b - b / 3).unwrap()
            })
        }),
        ("concat", |s| {
            let mut r = rng(s);
            let (a, b, c) = (extent(&mut r), extent(&mut r), extent(&mut r));
            op_gradient_error(
                &[randn(vec![a, b], &mut r), randn(vec![a, c], &mut r)],
                s,
                |t, v| t.concat(&[v[0], v[1]], 1).unwrap(),
            )
        }),
        ("broadcast_batch", |s| {
            let mut r = rng(s);
            let shape = vec![1, extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| {
                t.broadcast_batch(v[0], 3).unwrap()
            })
        }),
        ("softmax (last axis)", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.softmax(v[0], 1).unwrap())
        }),
        ("softmax (inner axis)", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.softmax(v[0], 1).unwrap())
        }),
        ("layer_norm", |s| {
            let mut r = rng(s);
            let (rows, d) = (extent(&mut r), extent(&mut r).max(2));
            op_gradient_error(
                &[
                    randn(vec![rows, d], &mut r),
                    randn(vec![d], &mut r),
                    randn(vec![d], &mut r),
                ],
                s,
                |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6).unwrap(),
            )
        }),
        ("gelu", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[Tensor::randn(shape, 2.0, &mut r)], s, |t, v| t.gelu(v[0]))
        }),
        ("cross_entropy", |s| {
            let mut r = rng(s);
            let (b, k) = (extent(&mut r), extent(&mut r).max(2));
            let labels: Vec<usize> = (0..b).map(|i| (i * 7 + s as usize) % k).collect();
            let logits = randn(vec![b, k], &mut r);
            op_gradient_error(&[logits], s, move |t, v| {
                t.cross_entropy(v[0], &labels).unwrap()
            })
        }),
        ("sum", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.sum(v[0]))
        }),
        ("mean", |s| {
            let mut r = rng(s);
            let shape = vec![extent(&mut r), extent(&mut r)];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| t.mean(v[0]))
        }),
        ("attention_head", |s| {
            let mut r = rng(s);
            let (n, dk, dv) = (extent(&mut r), extent(&mut r), extent(&mut r));
            op_gradient_error(
                &[
                    randn(vec![n, dk], &mut r),
                    randn(vec![n, dk], &mut r),
                    randn(vec![n, dv], &mut r),
                ],
                s,
                |t, v| vitkit::vit::attention_head(t, v[0], v[1], v[2]).unwrap(),
            )
        }),
        ("multi_head", |s| {
            let mut r = rng(s);
            let n = extent(&mut r);
            let d = 8;
            let mut inputs = vec![randn(vec![n, d], &mut r)];
            for _ in 0..4 {
                inputs.push(Tensor::randn(vec![d, d], 0.5, &mut r));
                inputs.push(Tensor::randn(vec![d], 0.5, &mut r));
            }
            op_gradient_error(&inputs, s, |t, v| {
                let p = vitkit::vit::AttentionParams {
                    wq: v[1],
                    bq: v[2],
                    wk: v[3],
                    bk: v[4],
                    wv: v[5],
                    bv: v[6],
                    wo: v[7],
                    bo: v[8],
                };
                vitkit::vit::multi_head(t, v[0], &p, 2).unwrap()
            })
        }),
        ("patchify", |s| {
            let mut r = rng(s);
            let shape = vec![2, 4, 6, 3];
            op_gradient_error(&[randn(shape, &mut r)], s, |t, v| {
                vitkit::vit::patchify_on(t, v[0], 2).unwrap()
            })
        }),
    ]
}

/// Three-loop reference for single-head attention on row-major matrices.
pub fn brute_attention(q: &[f64], k: &[f64], v: &[f64], n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_q * d_v];
    for i in 0..n_q {
        let mut scores = vec![0.0; n_k];
        for j in 0..n_k {
            let mut dot = 0.0;
            for c in 0..d_k {
                dot += q[i * d_k + c] * k[j * d_k + c];
            }
            scores[j] = dot / (d_k as f64).sqrt();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..n_k {
            for c in 0..d_v {
                out[i * d_v + c] += exps[j] / z * v[j * d_v + c];
            }
        }
    }
    out
}

fn project(x: &[f64], n: usize, d_in: usize, w: &[f64], b: &[f64], d_out: usize, col0: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * cols];
    for i in 0..n {
        for c in 0..cols {
            let mut acc = b[col0 + c];
            for p in 0..d_in {
                acc += x[i * d_in + p] * w[p * d_out + col0 + c];
            }
            y[i * cols + c] = acc;
        }
    }
    y
}

/// Multi-head reference: each head projects with its own column slice of
/// W_Q/W_K/W_V, attends, and the concatenated heads go through W_O.
pub fn brute_multi_head(x: &[f64], n: usize, d: usize, heads: usize, w: &[Vec<f64>; 4], b: &[Vec<f64>; 4]) -> Vec<f64> {
    let dk = d / heads;
    let mut concat = vec![0.0; n * d];
    for h in 0..heads {
        let q = project(x, n, d, &w[0], &b[0], d, h * dk, dk);
        let k = project(x, n, d, &w[1], &b[1], d, h * dk, dk);
        let v = project(x, n, d, &w[2], &b[2], d, h * dk, dk);
        let o = brute_attention(&q, &k, &v, n, n, dk, dk);
        for i in 0..n {
            concat[i * d + h * dk..i * d + (h + 1) * dk].copy_from_slice(&o[i * dk..(i + 1) * dk]);
        }
    }
    project(&concat, n, d, &w[3], &b[3], d, 0, d)
}

/// Worst absolute deviation of the tape attention (single- and multi-head)
/// from the loop references over `trials` random shapes with at most four
/// tokens and eight dims.
pub fn attention_oracle_error(trials: usize, seed: u64) -> f64 {
    use rand::Rng;
    use vitkit::vit::attention::{attention_head, multi_head, AttentionParams};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n_q = r.random_range(1..=4);
        let n_k = r.random_range(1..=4);
        let d_k = r.random_range(1..=8);
        let d_v = r.random_range(1..=8);
        let q = randn(vec![n_q, d_k], &mut r);
        let k = randn(vec![n_k, d_k], &mut r);
        let v = randn(vec![n_k, d_v], &mut r);
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        let out = attention_head(&mut tape, qv, kv, vv).unwrap();
        let want = brute_attention(q.data(), k.data(), v.data(), n_q, n_k, d_k, d_v);
        for (a, b) in tape.value(out).data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }

        let heads = r.random_range(1..=4);
        let d = heads * r.random_range(1..=(8 / heads));
        let n = r.random_range(1..=4);
        let x = randn(vec![n, d], &mut r);
        let ws: [Tensor; 4] = std::array::from_fn(|_| randn(vec![d, d], &mut r));
        let bs: [Tensor; 4] = std::array::from_fn(|_| randn(vec![d], &mut r));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv: Vec<Var> = ws.iter().map(|t| tape.constant(t.clone())).collect();
        let bv: Vec<Var> = bs.iter().map(|t| tape.constant(t.clone())).collect();
        let p = AttentionParams {
            wq: wv[0],
            bq: bv[0],
            wk: wv[1],
            bk: bv[1],
            wv: wv[2],
            bv: bv[2],
            wo: wv[3],
            bo: bv[3],
        };
        let out = multi_head(&mut tape, xv, &p, heads).unwrap();
        let want = brute_multi_head(
            x.data(),
            n,
            d,
            heads,
            &ws.clone().map(|t| t.into_data()),
            &bs.clone().map(|t| t.into_data()),
        );
        for (a, b) in tape.value(out).data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn tiny_model(seed: u64) -> vitkit::vit::ViTModel {
    use vitkit::vit::{preset_config, Variant, ViTModel};
    // scale the default init up so every path carries signal at FD precision
    let mut m = ViTModel::new(preset_config(Variant::Tiny), seed).unwrap();
    let mut r = rng(seed ^ 0x55);
    for p in m.params_mut().iter_mut() {
        let shape = p.tensor.shape().to_vec();
        let noise = Tensor::randn(shape, 0.2, &mut r);
        let base = p.tensor.data().to_vec();
        for (dst, (b, n)) in p.tensor.data_mut().iter_mut().zip(base.iter().zip(noise.data())) {
            *dst = b + n;
        }
    }
    m
}

/// FD check of one encoder block's input gradient for the Tiny preset.
pub fn encoder_block_gradient_error(seed: u64) -> f64 {
    use vitkit::vit::encoder_block;
    let m = tiny_model(seed);
    let heads = m.config().heads;
    let d = m.config().hidden_size;
    let x = randn(vec![1, 5, d], &mut rng(seed));
    op_gradient_error(&[x], seed, |t, v| {
        let bound = m.params().bind(t);
        let bp = m.block_params(&bound, 0);
        encoder_block(t, v[0], &bp, heads, &mut |_, _, a| Ok(a)).unwrap()
    })
}

/// Cross-entropy of the Tiny model on a fixed batch, and its analytic
/// gradient w.r.t. every parameter (flattened in storage order).
fn tiny_loss(m: &vitkit::vit::ViTModel, batch: &Tensor, labels: &[usize], grads: bool) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let x = tape.constant(batch.clone());
    let out = m.forward_on(&mut tape, &bound, x, None).unwrap();
    let loss = tape.cross_entropy(out.logits, labels).unwrap();
    let value = tape.value(loss).item().unwrap();
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let mut flat = Vec::new();
    for v in bound.vars() {
        flat.extend_from_slice(tape.grad(*v).unwrap());
    }
    (value, flat)
}

/// FD check of the full Tiny forward + cross-entropy on `samples` randomly
/// chosen parameter coordinates. Returns the worst relative error.
pub fn end_to_end_gradient_error(seed: u64, samples: usize) -> f64 {
    use rand::seq::index::sample;
    let m = tiny_model(seed);
    let res = m.config().image_resolution;
    let mut r = rng(seed ^ 0x77);
    let batch = Tensor::uniform([2, res, res, 3], -1.0, 1.0, &mut r);
    let labels = [1, 3];
    let (_, analytic) = tiny_loss(&m, &batch, &labels, true);

    let base: Vec<f64> = m.params().iter().flat_map(|p| p.tensor.data().to_vec()).collect();
    let picks: Vec<usize> = sample(&mut r, base.len(), samples).into_vec();
    let numeric = numeric_gradient(
        |flat| {
            let mut probe = m.clone();
            let mut at = 0;
            for p in probe.params_mut().iter_mut() {
                let n = p.tensor.numel();
                p.tensor.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
            }
            tiny_loss(&probe, &batch, &labels, false).0
        },
        &base,
        &picks,
        FD_STEP,
    );
    let analytic: Vec<f64> = picks.iter().map(|&i| analytic[i]).collect();
    max_relative_error(&analytic, &numeric)
}

/// A Tiny model fitted for a few epochs on a synthetic 4-class set, together
/// with that set.
pub fn trained_tiny(epochs: usize, seed: u64) -> (vitkit::vit::ViTModel, vitkit::dataset::InMemoryDataset) {
    use vitkit::dataset::InMemoryDataset;
    use vitkit::train::{train, HyperParams};
    use vitkit::vit::{preset_config, Variant, ViTModel};
    let data = InMemoryDataset::synthetic(4, 8, 32, seed);
    let hp = HyperParams {
        epochs,
        batch_size: 8,
        seed,
        ..Default::default()
    };
    let model = ViTModel::new(preset_config(Variant::Tiny), seed).unwrap();
    let out = train(&model, &data, &data, &hp, None).unwrap();
    (out.last, data)
}

/// Logit `class` of `model` on `image` with `offset` added at the probe site.
fn probed_logit(
    model: &vitkit::vit::ViTModel,
    image: &Tensor,
    class: usize,
    site: vitkit::vit::ActivationSite,
    offset: Tensor,
) -> f64 {
    use vitkit::vit::Probe;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let x = tape.constant(image.clone());
    let probe = Probe {
        layer: model.config().layers - 1,
        site,
        offset: Some(offset),
    };
    let out = model.forward_on(&mut tape, &bound, x, Some(&probe)).unwrap();
    tape.value(out.logits).at(&[0, class])
}

/// FD check of `capture_target`'s `∂Y_c/∂A` on `samples` random entries.
pub fn cam_gradient_error(
    model: &vitkit::vit::ViTModel,
    image: &Tensor,
    class: usize,
    site: vitkit::vit::ActivationSite,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::seq::index::sample;
    use vitkit::gradcam::capture_target;
    let target = capture_target(model, image, class, site).unwrap();
    let shape = target.activations.shape().to_vec();
    let n = shape[0] * shape[1];
    let picks = sample(&mut rng(seed), n, samples).into_vec();
    let zero = vec![0.0; n];
    let numeric = numeric_gradient(
        |flat| {
            let off = Tensor::from_vec([1, shape[0], shape[1]], flat.to_vec()).unwrap();
            probed_logit(model, image, class, site, off)
        },
        &zero,
        &picks,
        FD_STEP,
    );
    let analytic: Vec<f64> = picks.iter().map(|&i| target.gradients.data()[i]).collect();
    max_relative_error(&analytic, &numeric)
}

/// Temporary directory holding a synthetic class-per-directory image tree.
pub fn image_tree(classes: usize, per_class: usize, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    vitkit::dataset::InMemoryDataset::synthetic(classes, per_class, 32, seed)
        .write_tree(dir.path())
        .unwrap();
    dir
}

/// Runs the CLI in-process with `args` (no program name needed).
pub fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["vitkit"];
    full.extend_from_slice(args);
    vitkit::cli::run(full)
}
