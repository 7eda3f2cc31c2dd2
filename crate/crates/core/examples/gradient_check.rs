//! Differentiates a small network through the reverse-mode tape and
//! compares every parameter gradient with central differences.
//!
//! cargo run --release --example gradient_check

use rand::Rng as _;
use tiode::numeric::{Activation, Fnn, FnnSpec, ParamStore, Tape, Tensor};
use tiode::seed::rng_from_seed;

fn main() -> tiode::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(3);
    let spec = FnnSpec::new(&[4, 16, 3], Activation::Tanh, Activation::Sigmoid);
    let net = Fnn::build(&mut store, "net", &spec, true, &mut rng)?;
    let x = Tensor::from_rows_flat(5, 4, &(0..20).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());

    let loss = |store: &ParamStore| -> tiode::Result<(f64, Tape, tiode::numeric::Var)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = net.forward(&mut tape, store, xv, None)?;
        let y2 = tape.square(y);
        let l = tape.sum(y2);
        Ok((tape.value(l).data()[0], tape, l))
    };
    let (_, tape, l) = loss(&store)?;
    let grads = tape.backward(l)?.dense(&store);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..grads[k].len() {
            let orig = store.block(id).value.data()[i];
            store.block_mut(id).value.data_mut()[i] = orig + h;
            let lp = loss(&store)?.0;
            store.block_mut(id).value.data_mut()[i] = orig - h;
            let lm = loss(&store)?.0;
            store.block_mut(id).value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[k].data()[i];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
        }
    }
    println!("{} parameters, max relative gradient error {worst:.2e}", store.num_scalars());
    Ok(())
}
