//! Finite-difference gradient suite shared by the gradient tests and the
//! acceptance run. Each group appends `(tag, worst relative error)`.

use super::*;
use actmatch::data::BackgroundSampler;
use actmatch::explain::{
    binarize, binarize_ste, composite, cosine_distance, loss_act, loss_area, loss_bin, loss_ce, loss_kl, loss_tv, mse, record_objective,
    ExplainConfig, Reference,
};
use actmatch::nn::{BoundAutoencoder, BoundClassifier, ClassifierCnn, MaskAutoencoder, ModelBundle, TapKind};
use actmatch::tensor::{softmax_rows, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Reduces `out` to a scalar through fixed random weights so the whole
/// Jacobian is exercised.
fn probe(tape: &mut Tape<f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let mut r = rng(shape.iter().product::<usize>() as u64 + 17);
    let c = tape.constant(uniform(&shape, -1.0, 1.0, &mut r));
    let p = tape.mul(out, c).unwrap();
    tape.sum(p)
}

pub type Results = Vec<(&'static str, f64)>;

fn check(
    out: &mut Results,
    tag: &'static str,
    draw: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    out.push((tag, fd_over_seeds(tag, draw, f)));
}

fn two(shape: &'static [usize], lo: f64, hi: f64) -> impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    move |r| vec![uniform(shape, -1.0, 1.0, r), uniform(shape, lo, hi, r)]
}

fn one(shape: &'static [usize], lo: f64, hi: f64) -> impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    move |r| vec![uniform(shape, lo, hi, r)]
}

pub fn elementwise_binary_ops(out: &mut Results) {
    check(out, "add", two(&[2, 3], -1.0, 1.0), |t, v| {
        let o = t.add(v[0], v[1]).unwrap();
        probe(t, o)
    });
    check(out, "sub", two(&[2, 3], -1.0, 1.0), |t, v| {
        let o = t.sub(v[0], v[1]).unwrap();
        probe(t, o)
    });
    check(out, "mul", two(&[2, 3], -1.0, 1.0), |t, v| {
        let o = t.mul(v[0], v[1]).unwrap();
        probe(t, o)
    });
    check(out, "div", two(&[2, 3], 0.5, 2.0), |t, v| {
        let o = t.div(v[0], v[1]).unwrap();
        probe(t, o)
    });
}

pub fn elementwise_unary_ops(out: &mut Results) {
    check(out, "affine", one(&[5], -1.0, 1.0), |t, v| {
        let o = t.affine(v[0], 1.7, -0.3);
        probe(t, o)
    });
    check(out, "scale", one(&[5], -1.0, 1.0), |t, v| {
        let o = t.scale(v[0], -2.5);
        probe(t, o)
    });
    check(out, "square", one(&[5], -1.0, 1.0), |t, v| {
        let o = t.square(v[0]);
        probe(t, o)
    });
    check(out, "sqrt", one(&[5], 0.5, 2.0), |t, v| {
        let o = t.sqrt(v[0]);
        probe(t, o)
    });
    check(out, "abs", one(&[6], -1.0, 1.0), |t, v| {
        let o = t.abs(v[0]);
        probe(t, o)
    });
    check(out, "ln", one(&[5], 0.5, 2.0), |t, v| {
        let o = t.ln(v[0]);
        probe(t, o)
    });
    check(out, "relu", one(&[6], -1.0, 1.0), |t, v| {
        let o = t.relu(v[0]);
        probe(t, o)
    });
    check(out, "sigmoid", one(&[5], -3.0, 3.0), |t, v| {
        let o = t.sigmoid(v[0]);
        probe(t, o)
    });
    check(out, "squash", one(&[5], -3.0, 3.0), |t, v| {
        let o = t.squash(v[0], 1e-6);
        probe(t, o)
    });
}

pub fn reductions_and_reshapes(out: &mut Results) {
    check(out, "sum", one(&[2, 3], -1.0, 1.0), |t, v| {
        let s = t.sum(v[0]);
        t.scale(s, 0.7)
    });
    check(out, "mean", one(&[2, 3], -1.0, 1.0), |t, v| {
        let s = t.mean(v[0]);
        t.square(s)
    });
    check(out, "reshape", one(&[2, 3], -1.0, 1.0), |t, v| {
        let o = t.reshape(v[0], vec![3, 2]).unwrap();
        probe(t, o)
    });
    check(out, "flatten", one(&[2, 2, 3], -1.0, 1.0), |t, v| {
        let o = t.flatten(v[0]).unwrap();
        probe(t, o)
    });
}

pub fn conv_linear_pool_upsample(out: &mut Results) {
    let conv =
        |r: &mut ChaCha8Rng| vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -1.0, 1.0, r), uniform(&[3], -1.0, 1.0, r)];
    check(out, "conv2d padded", conv, |t, v| {
        let o = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
        probe(t, o)
    });
    check(out, "conv2d strided", conv, |t, v| {
        let o = t.conv2d(v[0], v[1], v[2], 2, 0).unwrap();
        probe(t, o)
    });
    check(
        out,
        "linear",
        |r| vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[2, 4], -1.0, 1.0, r), uniform(&[2], -1.0, 1.0, r)],
        |t, v| {
            let o = t.linear(v[0], v[1], v[2]).unwrap();
            probe(t, o)
        },
    );
    check(out, "maxpool2d", one(&[1, 2, 4, 4], -1.0, 1.0), |t, v| {
        let o = t.maxpool2d(v[0], 2, 2).unwrap();
        probe(t, o)
    });
    check(out, "upsample_nearest", one(&[1, 2, 2, 3], -1.0, 1.0), |t, v| {
        let o = t.upsample_nearest(v[0], 2).unwrap();
        probe(t, o)
    });
}

pub fn softmax_family(out: &mut Results) {
    check(out, "softmax", one(&[2, 4], -2.0, 2.0), |t, v| {
        let o = t.softmax(v[0]);
        probe(t, o)
    });
    check(out, "log_softmax", one(&[2, 4], -2.0, 2.0), |t, v| {
        let o = t.log_softmax(v[0]);
        probe(t, o)
    });
    check(out, "pick", one(&[3, 4], -1.0, 1.0), |t, v| {
        let o = t.pick(v[0], &[0, 3, 1]).unwrap();
        probe(t, o)
    });
    check(out, "total_variation", one(&[1, 1, 4, 4], 0.0, 1.0), |t, v| t.total_variation(v[0]).unwrap());
}

pub fn loss_terms(out: &mut Results) {
    check(out, "cosine_distance", two(&[1, 6], -1.0, 1.0), |t, v| cosine_distance(t, v[0], v[1]).unwrap());
    check(out, "mse", two(&[1, 2, 3, 3], -1.0, 1.0), |t, v| mse(t, v[0], v[1]).unwrap());
    check(
        out,
        "loss_act",
        |r| {
            vec![
                uniform(&[1, 2, 3, 3], 0.0, 1.0, r),
                uniform(&[1, 2, 3, 3], 0.0, 1.0, r),
                uniform(&[1, 5], 0.0, 1.0, r),
                uniform(&[1, 5], 0.0, 1.0, r),
            ]
        },
        |t, v| loss_act(t, &[v[0], v[2]], &[v[1], v[3]], &[TapKind::ConvMap, TapKind::Vector], &[0.7, 1.3]).unwrap(),
    );
    check(out, "loss_ce", one(&[1, 5], -2.0, 2.0), |t, v| loss_ce(t, v[0], 3).unwrap());
    check(out, "loss_kl", one(&[1, 5], -2.0, 2.0), |t, v| {
        let p = softmax_rows(&Tensor::new(vec![1, 5], vec![0.3, -1.0, 2.0, 0.1, 0.5]).unwrap());
        loss_kl(t, &p, v[0]).unwrap()
    });
    check(out, "loss_area", one(&[1, 1, 4, 4], 0.05, 0.95), |t, v| loss_area(t, v[0]));
    check(out, "loss_bin", one(&[1, 1, 4, 4], 0.05, 0.95), |t, v| loss_bin(t, v[0]).unwrap());
    check(out, "loss_tv", one(&[1, 1, 4, 4], 0.05, 0.95), |t, v| loss_tv(t, v[0]).unwrap());
    check(
        out,
        "composite",
        |r| vec![uniform(&[1, 1, 3, 3], 0.0, 1.0, r)],
        |t, v| {
            let x = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64 * 0.3 - 1.0);
            let b = Tensor::full(vec![1, 1, 3, 3], -0.4);
            let o = composite(t, v[0], &x, &b).unwrap();
            probe(t, o)
        },
    );
}

/// A compact three-block classifier on 8x8 inputs (pooled to 2x2).
fn small_classifier(seed: u64) -> ClassifierCnn<f64> {
    ClassifierCnn::<f64>::random(&[1, 2, 3, 2], 3, 4, 3, seed)
}

pub fn classifier_loss_parameter_gradients(out: &mut Results) {
    let layers = small_classifier(0).params().len();
    let tag = "classifier cross-entropy";
    let worst = fd_over_seeds(
        tag,
        |r| {
            let model = small_classifier(rand::Rng::gen(r));
            let mut inputs: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
            inputs.push(uniform(&[2, 1, 8, 8], -0.4, 2.8, r));
            inputs
        },
        |t, v| {
            let model = small_classifier(0);
            let bound = BoundClassifier::from_vars(&v[..layers]).unwrap();
            let trace = bound.forward(&model, t, v[layers]).unwrap();
            let logp = t.log_softmax(trace.logits);
            let picked = t.pick(logp, &[2, 0]).unwrap();
            let s = t.mean(picked);
            t.scale(s, -1.0)
        },
    );
    out.push((tag, worst));
}

/// The full explanation objective as a function of the autoencoder's
/// parameters, with the binarization replaced by the identity so the
/// objective is smooth. A 4x4 input keeps the number of ReLU kinks small
/// enough that clean draws are common.
pub fn explanation_objective_autoencoder_gradients(out: &mut Results) {
    let bundle = ModelBundle::with_default_taps(ClassifierCnn::<f64>::random(&[1, 2, 3, 2], 3, 1, 3, 5));
    // Non-trivial per-tap weights.
    let cfg = ExplainConfig { alpha: vec![0.5, 1.0, 1.5, 2.0], ..ExplainConfig::default() };
    let weights = cfg.weights(bundle.taps().len()).unwrap();
    let tag = "explanation objective";
    // Image and background change with each draw but are not differentiated.
    let fixed = std::cell::RefCell::new((Tensor::zeros(vec![1]), Tensor::zeros(vec![1])));
    let worst = fd_over_seeds(
        tag,
        |r| {
            let ae = MaskAutoencoder::<f64>::new(1, rand::Rng::gen(r));
            let x = uniform(&[1, 1, 4, 4], -0.42, 2.8, r);
            let bg = BackgroundSampler::standard(rand::Rng::gen(r)).sample(&[1, 1, 4, 4]);
            *fixed.borrow_mut() = (x, bg);
            ae.params().into_iter().cloned().collect()
        },
        |t, v| {
            let (x, r) = fixed.borrow().clone();
            let reference = Reference::new(&bundle, &x).unwrap();
            let classifier = bundle.bind(t);
            let ae = BoundAutoencoder::from_vars(&v[..8]).unwrap();
            let xv = t.constant(x);
            let m_soft = ae.forward(t, xv).unwrap();
            record_objective(t, &bundle, &classifier, &reference, m_soft, m_soft, &r, &weights).unwrap().total
        },
    );
    out.push((tag, worst));
}

/// Straight-through contract: the gradient reaching `m_soft` equals the one
/// obtained by substituting `m_soft + const(hard - soft)`, whose forward value
/// is the hard mask and whose backward is the identity.
pub fn straight_through_matches_detached_identity(out: &mut Results) {
    let bundle = ModelBundle::with_default_taps(small_classifier(9));
    let weights = ExplainConfig::default().weights(4).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let x = uniform(&[1, 1, 8, 8], -0.42, 2.8, &mut r);
        let bg = BackgroundSampler::standard(seed).sample::<f64>(&[1, 1, 8, 8]);
        let soft = uniform(&[1, 1, 8, 8], 0.05, 0.95, &mut r);
        let reference = Reference::new(&bundle, &x).unwrap();

        let grad_with = |use_ste: bool| {
            let mut t = Tape::new();
            let cl = bundle.bind(&mut t);
            let m_soft = t.param(soft.clone());
            let m = if use_ste {
                binarize_ste(&mut t, m_soft)
            } else {
                let hard = binarize(&soft);
                let offset = Tensor::new(soft.shape().to_vec(), hard.data().iter().zip(soft.data()).map(|(h, s)| h - s).collect()).unwrap();
                let c = t.constant(offset);
                t.add(m_soft, c).unwrap()
            };
            let obj = record_objective(&mut t, &bundle, &cl, &reference, m_soft, m, &bg, &weights).unwrap();
            t.backward(obj.total).unwrap();
            (t.value(m).clone(), t.grad(m_soft).unwrap().to_vec())
        };
        let (m_ste, g_ste) = grad_with(true);
        let (m_id, g_id) = grad_with(false);
        for (a, b) in m_ste.data().iter().zip(m_id.data()).chain(g_ste.iter().zip(&g_id)) {
            worst = worst.max(rel(*a, *b));
        }
    }
    out.push(("straight-through contract", worst));
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn all() -> Results {
    let mut out = Vec::new();
    elementwise_binary_ops(&mut out);
    elementwise_unary_ops(&mut out);
    reductions_and_reshapes(&mut out);
    conv_linear_pool_upsample(&mut out);
    softmax_family(&mut out);
    loss_terms(&mut out);
    classifier_loss_parameter_gradients(&mut out);
    explanation_objective_autoencoder_gradients(&mut out);
    straight_through_matches_detached_identity(&mut out);
    out
}
