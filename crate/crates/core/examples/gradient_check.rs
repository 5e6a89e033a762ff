//! Central-difference check of the classifier's cross-entropy gradient with
//! respect to every parameter of a small random CNN, in f64.
//!
//! cargo run --example gradient_check -- [seed]

use actmatch::nn::ClassifierCnn;
use actmatch::tensor::{Tape, Tensor};

fn loss(model: &ClassifierCnn<f64>, x: &Tensor<f64>, labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let trace = bound.forward(model, &mut tape, xv).expect("forward");
    let logp = tape.log_softmax(trace.logits);
    let picked = tape.pick(logp, labels).expect("labels");
    let mean = tape.mean(picked);
    let l = tape.scale(mean, -1.0);
    tape.backward(l).expect("backward");
    let grads = bound.params().iter().map(|&p| tape.grad(p).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    (tape.value(l).item(), grads)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let mut model = ClassifierCnn::<f64>::random(&[1, 3, 4, 5], 3, 4, 4, seed);
    let x = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|i| (i * 37 % 17) as f64 / 8.0 - 1.0).collect())?;
    let labels = [1, 3];
    let (_, analytic) = loss(&model, &x, &labels);
    let h = 1e-5;
    for (p, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (i, &g) in grad.iter().enumerate() {
            let orig = model.params_mut()[p].data()[i];
            model.params_mut()[p].data_mut()[i] = orig + h;
            let up = loss(&model, &x, &labels).0;
            model.params_mut()[p].data_mut()[i] = orig - h;
            let down = loss(&model, &x, &labels).0;
            model.params_mut()[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1.0));
        }
        println!("param {p} ({} values): max relative error {worst:.2e}", grad.len());
    }
    Ok(())
}
