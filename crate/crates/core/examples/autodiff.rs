//! Reverse-mode autodiff on the tape: a two-layer classifier, a gradient
//! checked against central differences, then a few Adam steps.
//!
//! cargo run --example autodiff

use smfa::numerics::{OptimizerState, ParamMap, SeededRng, Tape, Tensor};

fn random(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn loss(params: &ParamMap, x: &Tensor, y: &[usize]) -> smfa::Result<(f64, ParamMap)> {
    let mut tape = Tape::new();
    let w1 = tape.param(params["w1"].clone());
    let b1 = tape.param(params["b1"].clone());
    let w2 = tape.param(params["w2"].clone());
    let x = tape.constant(x.clone());
    let h = tape.matmul_nt(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.gelu(h);
    let z = tape.matmul_nt(h, w2)?;
    let l = tape.softmax_cross_entropy(z, y)?;
    let mut g = tape.backward(l)?;
    let mut grads = ParamMap::new();
    for (name, v) in [("w1", w1), ("b1", b1), ("w2", w2)] {
        grads.insert(name.into(), g.take(v).expect("parameter gradient"));
    }
    Ok((tape.value(l).item()?, grads))
}

fn main() -> smfa::Result<()> {
    let mut rng = SeededRng::new(7);
    let x = random(&mut rng, &[8, 5], 1.0);
    let y: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let mut params = ParamMap::new();
    params.insert("w1".into(), random(&mut rng, &[6, 5], 0.5));
    params.insert("b1".into(), Tensor::zeros(&[6]));
    params.insert("w2".into(), random(&mut rng, &[3, 6], 0.5));

    let (l0, grads) = loss(&params, &x, &y)?;
    println!("initial loss {l0:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, g) in &grads {
        for j in 0..g.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[j] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[j] -= h;
            let fd = (loss(&plus, &x, &y)?.0 - loss(&minus, &x, &y)?.0) / (2.0 * h);
            let an = g.data()[j];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
        }
    }
    println!("worst relative error against central differences: {worst:.2e}");

    let mut opt = OptimizerState::adam(0.05);
    for step in 1..=100 {
        let (l, g) = loss(&params, &x, &y)?;
        opt.step(&mut params, &g)?;
        if step % 20 == 0 {
            println!("step {step:>3}  loss {l:.6}");
        }
    }
    Ok(())
}
