mod common;

use common::{op_cases, rng};
use proptest::prelude::*;
use vitkit::{Error, Tape, Tensor};

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, case) in op_cases() {
        for seed in 0..4 {
            let err = case(seed);
            assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_vec([3], vec![0.2, -4.0, 1.0]).unwrap().with_requires_grad(true));
    let loss = tape.sum(w);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn quadratic_gradient() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
    let sq = tape.mul(w, w).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
}

#[test]
fn reused_tensor_accumulates_both_paths() {
    // loss = sum(3w) + sum(w ⊙ w): grad = 3 + 2w
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_vec([2], vec![0.5, -1.0]).unwrap().with_requires_grad(true));
    let a = tape.scale(w, 3.0);
    let a = tape.sum(a);
    let b = tape.mul(w, w).unwrap();
    let b = tape.sum(b);
    let both = tape.concat(&[a, b], 0);
    assert!(both.is_err(), "scalars have no axis to concatenate");
    let a1 = tape.reshape(a, &[1]).unwrap();
    let b1 = tape.reshape(b, &[1]).unwrap();
    let ab = tape.concat(&[a1, b1], 0).unwrap();
    let loss = tape.sum(ab);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[4.0, 1.0]);
}

#[test]
fn backward_needs_scalar() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::zeros([2]).with_requires_grad(true));
    assert!(matches!(tape.backward(w), Err(Error::Shape(_))));
}

#[test]
fn every_tracked_node_gets_a_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::randn([3, 4], 1.0, &mut rng(0)).with_requires_grad(true));
    let c = tape.constant(Tensor::ones([4]));
    let h = tape.add(x, c).unwrap();
    let g = tape.gelu(h);
    let loss = tape.mean(g);
    tape.backward(loss).unwrap();
    for v in [x, h, g, loss] {
        let grad = tape.grad(v).expect("tracked node has a gradient");
        assert_eq!(grad.len(), tape.value(v).numel());
    }
    assert!(tape.grad(c).is_none());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(values in prop::collection::vec(-500.0f64..500.0, 1..16)) {
        let n = values.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([n], values).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        let total: f64 = tape.value(s).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(tape.value(s).data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn layer_norm_rows_are_standardized(
        values in prop::collection::vec(-100.0f64..100.0, 2..12),
        shift in -1e3f64..1e3,
    ) {
        let d = values.len();
        let spread = values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        let mut tape = Tape::new();
        let row: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let x = tape.constant(Tensor::from_vec([1, d], row).unwrap());
        let g = tape.constant(Tensor::ones([d]));
        let b = tape.constant(Tensor::zeros([d]));
        let eps = 1e-6;
        let y = tape.layer_norm(x, g, b, eps).unwrap();
        let out = tape.value(y).data();
        let mean = out.iter().sum::<f64>() / d as f64;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        prop_assert!(mean.abs() < 1e-9);
        // var(x̂) = σ² / (σ² + eps)
        let sigma2 = {
            let m = values.iter().sum::<f64>() / d as f64;
            values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64
        };
        prop_assert!((var - sigma2 / (sigma2 + eps)).abs() < 1e-9);
    }
}

#[test]
fn attention_matches_loop_reference() {
    let err = common::attention_oracle_error(1000, 17);
    assert!(err < 1e-10, "max abs deviation {err:e}");
}

#[test]
fn encoder_block_input_gradient() {
    for seed in 0..2 {
        let err = common::encoder_block_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn tiny_model_end_to_end_gradient() {
    let err = common::end_to_end_gradient_error(3, 100);
    assert!(err < 1e-3, "{err:e}");
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = vitkit::vit::attention_head(&mut tape, q, k, v).unwrap();
    tape.value(out).clone()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect::<Vec<_>>();
    Tensor::from_vec([perm.len(), cols], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_output_is_convex_combination_of_values(seed in any::<u64>(), n_k in 1usize..6, d in 1usize..6) {
        let mut r = rng(seed);
        let q = Tensor::randn([3, d], 2.0, &mut r);
        let k = Tensor::randn([n_k, d], 2.0, &mut r);
        let v = Tensor::randn([n_k, 4], 1.0, &mut r);
        let out = attend(&q, &k, &v);
        for c in 0..4 {
            let col: Vec<f64> = (0..n_k).map(|j| v.at(&[j, c])).collect();
            let lo = col.iter().cloned().fold(f64::MAX, f64::min);
            let hi = col.iter().cloned().fold(f64::MIN, f64::max);
            for i in 0..3 {
                let o = out.at(&[i, c]);
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn attention_ignores_key_value_order(seed in any::<u64>(), n_k in 2usize..6) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let q = Tensor::randn([2, 3], 1.0, &mut r);
        let k = Tensor::randn([n_k, 3], 1.0, &mut r);
        let v = Tensor::randn([n_k, 2], 1.0, &mut r);
        let mut perm: Vec<usize> = (0..n_k).collect();
        perm.shuffle(&mut r);
        let a = attend(&q, &k, &v);
        let b = attend(&q, &permute_rows(&k, &perm), &permute_rows(&v, &perm));
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn patchify_round_trips(seed in any::<u64>(), gh in 1usize..4, gw in 1usize..4, p in 1usize..5, c in 1usize..4) {
        let img = Tensor::randn([gh * p, gw * p, c], 1.0, &mut rng(seed));
        let patches = vitkit::vit::patchify(&img, p).unwrap();
        prop_assert_eq!(patches.shape(), &[gh * gw, p * p * c]);
        let back = vitkit::vit::unpatchify(&patches, p, gh * p, gw * p).unwrap();
        prop_assert_eq!(back, img);
    }
}
