//! Compares reverse-mode gradients of a small network with central
//! finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitkit::gradcheck::{max_relative_error, numeric_gradient, FD_STEP};
use vitkit::{Tape, Tensor};

fn loss(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> vitkit::Result<(vitkit::Var, vitkit::Var)> {
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone().with_requires_grad(true));
    let bv = tape.constant(b.clone());
    let h = tape.linear(xv, wv, bv)?;
    let h = tape.gelu(h);
    let one = tape.constant(Tensor::ones([3]));
    let zero = tape.constant(Tensor::zeros([3]));
    let h = tape.layer_norm(h, one, zero, 1e-6)?;
    let l = tape.cross_entropy(h, &[0, 2, 1, 1])?;
    Ok((wv, l))
}

fn main() -> vitkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn([4, 5], 1.0, &mut rng);
    let w = Tensor::randn([5, 3], 1.0, &mut rng);
    let b = Tensor::randn([3], 1.0, &mut rng);

    let mut tape = Tape::new();
    let (wv, l) = loss(&mut tape, &x, &w, &b)?;
    tape.backward(l)?;
    let analytic = tape.grad(wv).expect("w is tracked").to_vec();

    let idx: Vec<usize> = (0..w.numel()).collect();
    let numeric = numeric_gradient(
        |flat| {
            let w = Tensor::from_vec([5, 3], flat.to_vec()).expect("same shape");
            let mut t = Tape::new();
            let (_, l) = loss(&mut t, &x, &w, &b).expect("valid graph");
            t.value(l).item().expect("scalar")
        },
        w.data(),
        &idx,
        FD_STEP,
    );
    println!("max relative error over {} weights: {:.2e}", idx.len(), max_relative_error(&analytic, &numeric));
    Ok(())
}
