//! Scaled dot-product and multi-head attention on the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitkit::vit::{attention_head, multi_head, AttentionParams};
use vitkit::{Tape, Tensor};

fn main() -> vitkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::randn([2, 4], 1.0, &mut rng));
    let k = tape.constant(Tensor::randn([3, 4], 1.0, &mut rng));
    let v = tape.constant(Tensor::from_vec([3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0])?);
    let out = attention_head(&mut tape, q, k, v)?;
    println!("single head, 2 queries over 3 keys:\n{:?}", tape.value(out).data());

    let d = 8;
    let x = tape.constant(Tensor::randn([5, d], 1.0, &mut rng));
    let mut w = || tape.constant(Tensor::randn([d, d], 0.3, &mut rng));
    let (wq, wk, wv, wo) = (w(), w(), w(), w());
    let zero = tape.constant(Tensor::zeros([d]));
    let p = AttentionParams {
        wq,
        bq: zero,
        wk,
        bk: zero,
        wv,
        bv: zero,
        wo,
        bo: zero,
    };
    let y = multi_head(&mut tape, x, &p, 2)?;
    println!("two heads over 5 tokens -> {:?}", tape.shape(y));
    Ok(())
}
