//! Closed-form examples with known values, each as `(name, got, want)`.

use actmatch::circuit::{channel_energy, channel_grad_score, edge_weight_forward, edge_weight_gradient, fc_edge_weight, select_topk};
use actmatch::data::{denormalize_value, normalize_value, BackgroundSampler};
use actmatch::explain::{
    binarize, cosine_distance, evaluate_mask, loss_act, loss_area, loss_bin, loss_ce, loss_kl, loss_rob_value, loss_tv, LossTerms,
    LossWeights,
};
use actmatch::nn::{ClassifierCnn, ModelBundle, TapKind};
use actmatch::tensor::{conv2d_forward, linear_forward, maxpool2d_forward, softmax_rows, Adam, Tape, Tensor};

pub type Rows = Vec<(&'static str, f64, f64)>;

fn mask(values: Vec<f64>) -> Tensor<f64> {
    Tensor::new(vec![1, 1, 28, 28], values).unwrap()
}

fn scalar(f: impl FnOnce(&mut Tape<f64>) -> actmatch::tensor::Var) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t);
    t.value(v).item()
}

/// Largest absolute difference between two slices.
fn dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn all() -> Rows {
    let mut r: Rows = Vec::new();
    let eps = actmatch::nn::MASK_EPS;

    // Kernels.
    let ones = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
    let c = conv2d_forward(&ones, &ones, &Tensor::zeros(vec![1]), 1, 0).unwrap();
    r.push(("conv ones 3x3", c.item(), 9.0));
    let x = Tensor::from_fn(vec![1, 2, 4, 4], |i| i as f64 * 0.3 - 2.0);
    let z = conv2d_forward(&x, &Tensor::zeros(vec![3, 2, 3, 3]), &Tensor::zeros(vec![3]), 1, 1).unwrap();
    r.push(("conv zero kernel", dev(z.data(), &vec![0.0; z.numel()]), 0.0));
    let mut t = Tape::<f64>::new();
    let v = t.param(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = t.relu(v);
    r.push(("relu [-1,0,2]", dev(t.value(y).data(), &[0.0, 0.0, 2.0]), 0.0));
    let mut t = Tape::<f64>::new();
    let v = t.param(Tensor::new(vec![3], vec![-1.0, -0.5, -3.0]).unwrap());
    let y = t.relu(v);
    let s = t.sum(y);
    t.backward(s).unwrap();
    r.push(("relu all-negative value", dev(t.value(y).data(), &[0.0; 3]), 0.0));
    r.push(("relu all-negative grad", dev(t.grad(v).unwrap(), &[0.0; 3]), 0.0));
    let xi = Tensor::from_fn(vec![2, 3], |i| i as f64 - 2.5);
    let eye = Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let li = linear_forward(&xi, &eye, &Tensor::zeros(vec![3])).unwrap();
    r.push(("linear identity", dev(li.data(), xi.data()), 0.0));
    let bias = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let lb = linear_forward(&xi, &Tensor::zeros(vec![3, 3]), &bias).unwrap();
    r.push(("linear zero weight", dev(lb.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]), 0.0));
    let p = maxpool2d_forward(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 2, 2).unwrap();
    r.push(("maxpool [[1,2],[3,4]]", p.item(), 4.0));
    let pc = maxpool2d_forward(&Tensor::full(vec![1, 1, 4, 4], 0.7), 2, 2).unwrap();
    r.push(("maxpool constant", dev(pc.data(), &[0.7; 4]), 0.0));

    // Softmax.
    let u = softmax_rows(&Tensor::<f64>::zeros(vec![1, 10]));
    r.push(("softmax equal logits", dev(u.data(), &[0.1; 10]), 0.0));
    let l = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let shifted = softmax_rows(&l.map(|v| v + 4.0));
    r.push(("softmax shift by 4", dev(softmax_rows(&l).data(), shifted.data()), 0.0));
    let cf = softmax_rows(&Tensor::new(vec![1, 2], vec![0.0, 3f64.ln()]).unwrap());
    r.push(("softmax [0, ln 3]", dev(cf.data(), &[0.25, 0.75]), 0.0));

    // Tape gradients.
    let mut t = Tape::<f64>::new();
    let v = t.param(Tensor::new(vec![3], vec![0.3, -1.0, 4.0]).unwrap());
    let s = t.sum(v);
    t.backward(s).unwrap();
    r.push(("d sum(x)", dev(t.grad(v).unwrap(), &[1.0; 3]), 0.0));
    let mut t = Tape::<f64>::new();
    let v = t.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = t.square(v);
    let s = t.sum(sq);
    t.backward(s).unwrap();
    r.push(("d sum(x^2) at [1,2]", dev(t.grad(v).unwrap(), &[2.0, 4.0]), 0.0));

    // Adam.
    let mut adam = Adam::<f64>::with_lr(1e-3).unwrap();
    let mut w = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
    adam.step(&mut [&mut w], &[&[0.0, 0.0]]).unwrap();
    r.push(("adam zero gradient", dev(w.data(), &[0.5, -0.5]), 0.0));
    let mut adam = Adam::<f64>::with_lr(1e-3).unwrap();
    let mut w = Tensor::new(vec![1], vec![1.0]).unwrap();
    adam.step(&mut [&mut w], &[&[1.0]]).unwrap();
    r.push(("adam first step", 1.0 - w.item(), 1e-3));

    // Normalization and sampling.
    r.push(("normalize 0.1307", normalize_value(0.1307), 0.0));
    r.push(("normalize 0", normalize_value(0.0), -0.1307 / 0.3081));
    r.push(("normalize round trip", denormalize_value(normalize_value(0.42)), 0.42));
    let mut tiny = BackgroundSampler::new(0.3, 1e-12, 5).unwrap();
    r.push(("sampler std->0", dev(&tiny.sample_raw(8), &[0.3; 8]), 0.0));
    let (a, b) = (BackgroundSampler::standard(4).sample_raw(16), BackgroundSampler::standard(4).sample_raw(16));
    r.push(("sampler same seed", dev(&a, &b), 0.0));

    // Binarization.
    let bin = binarize(&Tensor::<f64>::new(vec![2], vec![0.7, 0.5]).unwrap());
    r.push(("binarize 0.7", bin.data()[0], 1.0));
    r.push(("binarize 0.5", bin.data()[1], 0.0));

    // Activation matching.
    let taps = Tensor::from_fn(vec![1, 2, 3, 3], |i| i as f64 * 0.1);
    let vecs = Tensor::from_fn(vec![1, 5], |i| i as f64 - 1.5);
    r.push((
        "act identical",
        scalar(|t| {
            let (a, v) = (t.constant(taps.clone()), t.constant(vecs.clone()));
            loss_act(t, &[a, v], &[a, v], &[TapKind::ConvMap, TapKind::Vector], &[1.0, 1.0]).unwrap()
        }),
        0.0,
    ));
    r.push((
        "act constant offset",
        scalar(|t| {
            let a = t.constant(taps.clone());
            let b = t.constant(taps.map(|v| v + 1.0));
            loss_act(t, &[a], &[b], &[TapKind::ConvMap], &[1.0]).unwrap()
        }),
        1.0,
    ));
    r.push((
        "act cosine (v, 2v)",
        scalar(|t| {
            let a = t.constant(vecs.clone());
            let b = t.constant(vecs.map(|v| 2.0 * v));
            cosine_distance(t, a, b).unwrap()
        }),
        0.0,
    ));

    // Cross-entropy and KL.
    r.push((
        "ce uniform K=10",
        scalar(|t| {
            let l = t.constant(Tensor::zeros(vec![1, 10]));
            loss_ce(t, l, 4).unwrap()
        }),
        10f64.ln(),
    ));
    r.push((
        "ce [y] -> +inf",
        scalar(|t| {
            let l = t.constant(Tensor::new(vec![1, 3], vec![1e3, 0.0, 0.0]).unwrap());
            loss_ce(t, l, 0).unwrap()
        }),
        0.0,
    ));
    r.push((
        "ce [2,0] y=0",
        scalar(|t| {
            let l = t.constant(Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap());
            loss_ce(t, l, 0).unwrap()
        }),
        0.126928,
    ));
    let logits = Tensor::new(vec![1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    r.push((
        "kl identical",
        scalar(|t| {
            let p = softmax_rows(&logits);
            let l = t.constant(logits.clone());
            loss_kl(t, &p, l).unwrap()
        }),
        0.0,
    ));
    r.push((
        "kl [.75,.25] || [.5,.5]",
        scalar(|t| {
            let p = Tensor::new(vec![1, 2], vec![0.75, 0.25]).unwrap();
            let l = t.constant(Tensor::zeros(vec![1, 2]));
            loss_kl(t, &p, l).unwrap()
        }),
        0.130812,
    ));

    // Mask priors.
    r.push((
        "area 1-eps",
        scalar(|t| {
            let m = t.constant(mask(vec![1.0 - eps; 784]));
            loss_area(t, m)
        }),
        1.0 - eps,
    ));
    r.push((
        "area eps",
        scalar(|t| {
            let m = t.constant(mask(vec![eps; 784]));
            loss_area(t, m)
        }),
        eps,
    ));
    let mut eight = vec![0.0; 784];
    eight[100..108].fill(1.0);
    r.push((
        "area 8 pixels",
        scalar(|t| {
            let m = t.constant(mask(eight.clone()));
            loss_area(t, m)
        }),
        8.0 / 784.0,
    ));
    r.push((
        "bin near-binary",
        scalar(|t| {
            let m = t.constant(mask((0..784).map(|i| if i % 3 == 0 { eps } else { 1.0 - eps }).collect()));
            loss_bin(t, m).unwrap()
        }),
        // ~0: every pixel sits eps from a binary value.
        eps * (1.0 - eps),
    ));
    r.push((
        "bin all 0.5",
        scalar(|t| {
            let m = t.constant(mask(vec![0.5; 784]));
            loss_bin(t, m).unwrap()
        }),
        0.25,
    ));
    let mut one_half = vec![1e-12; 784];
    one_half[300] = 0.5;
    r.push((
        "bin one pixel 0.5",
        scalar(|t| {
            let m = t.constant(mask(one_half.clone()));
            loss_bin(t, m).unwrap()
        }),
        0.25 / 784.0,
    ));
    r.push((
        "tv constant",
        scalar(|t| {
            let m = t.constant(mask(vec![0.6; 784]));
            loss_tv(t, m).unwrap()
        }),
        0.0,
    ));
    let mut single = vec![0.0; 784];
    single[14 * 28 + 14] = 1.0;
    r.push((
        "tv single pixel",
        scalar(|t| {
            let m = t.constant(mask(single.clone()));
            loss_tv(t, m).unwrap()
        }),
        4.0 / 784.0,
    ));
    r.push((
        "tv half plane",
        scalar(|t| {
            let m = t.constant(mask((0..784).map(|i| if i % 28 < 14 { 1.0 } else { 0.0 }).collect()));
            loss_tv(t, m).unwrap()
        }),
        28.0 / 784.0,
    ));

    // Robustness term.
    let bundle = ModelBundle::with_default_taps(ClassifierCnn::<f64>::mnist(3));
    let img = Tensor::from_fn(vec![1, 1, 28, 28], |i| ((i * 31) % 17) as f64 / 6.0 - 0.4);
    let bg = BackgroundSampler::standard(8).sample::<f64>(&[1, 1, 28, 28]);
    let ce_of = |input: &Tensor<f64>, y: usize| {
        let l = bundle.forward(input).unwrap();
        scalar(|t| {
            let lv = t.constant(l.clone());
            loss_ce(t, lv, y).unwrap()
        })
    };
    let full = Tensor::ones(vec![1, 1, 28, 28]);
    let empty = Tensor::zeros(vec![1, 1, 28, 28]);
    r.push(("rob mask ones", loss_rob_value(&bundle, &full, &img, &bg, 2).unwrap(), ce_of(&img, 2)));
    r.push(("rob mask zeros", loss_rob_value(&bundle, &empty, &img, &bg, 2).unwrap(), ce_of(&bg, 2)));

    // Weighted total.
    let unit = LossTerms::splat(1.0);
    r.push(("total all zero", LossWeights::new(LossTerms::splat(0.0), vec![]).unwrap().total(&unit), 0.0));
    let only_area = LossTerms { area: 1.0, ..LossTerms::splat(0.0) };
    let terms = LossTerms { area: 0.37, ..LossTerms::splat(5.0) };
    r.push(("total only area", LossWeights::new(only_area, vec![]).unwrap().total(&terms), 0.37));
    let mnist = LossTerms { act: 0.6, ce: 4.0, kl: 0.54, area: 100.0, bin: 1.2, tv: 50.0, rob: 10.0 };
    r.push(("total MNIST weights", LossWeights::new(mnist, vec![1.0; 4]).unwrap().total(&unit), 166.34));

    // Full mask keeps confidence.
    let f32_bundle = ModelBundle::with_default_taps(ClassifierCnn::<f32>::mnist(3));
    let m = evaluate_mask(&f32_bundle, &img.cast(), &Tensor::ones(vec![1, 1, 28, 28]), 3, 0).unwrap();
    r.push(("full mask confidence", m.confidence_e, m.confidence_x));
    r.push(("full mask fraction", m.active_fraction, 1.0));

    // Circuit readout.
    let e = |t: Tensor<f64>| channel_energy(&t).unwrap()[0];
    r.push(("energy zero channel", e(Tensor::zeros(vec![1, 1, 2, 2])), 0.0));
    r.push(("energy 2x2 ones", e(Tensor::ones(vec![1, 1, 2, 2])), 2.0));
    r.push(("energy single 3", e(Tensor::full(vec![1, 1, 1, 1], 3.0)), 3.0));
    r.push(("grad score zero", channel_grad_score(&Tensor::<f64>::zeros(vec![1, 1, 3, 3])).unwrap()[0], 0.0));
    r.push(("grad score 3x3 ones", channel_grad_score(&Tensor::<f64>::ones(vec![1, 1, 3, 3])).unwrap()[0], 3.0));
    let as_f = |v: Vec<usize>| v.into_iter().map(|i| i as f64).collect::<Vec<_>>();
    r.push(("topk [3,1,2] k=2", dev(&as_f(select_topk(&[3.0, 1.0, 2.0], 2).unwrap()), &[0.0, 2.0]), 0.0));
    r.push(("topk ties k=2", dev(&as_f(select_topk(&[0.5; 5], 2).unwrap()), &[0.0, 1.0]), 0.0));
    r.push(("edge fwd ones E=2", edge_weight_forward(&[1.0f64; 9], 2.0), 18.0));
    r.push(("edge fwd zero kernel", edge_weight_forward(&[0.0f64; 9], 2.0), 0.0));
    r.push(("edge fwd [[1,-2],[0,3]]", edge_weight_forward(&[1.0f64, -2.0, 0.0, 3.0], 1.0), 6.0));
    r.push(("edge grad G=0", edge_weight_gradient(&[1.0f64; 9], 0.0), 0.0));
    r.push(("edge grad ones G=0.5", edge_weight_gradient(&[1.0f64; 9], 0.5), 4.5));
    r.push(("edge grad = fwd(G)", edge_weight_gradient(&[0.3f64, -0.7, 1.1], 0.9), edge_weight_forward(&[0.3f64, -0.7, 1.1], 0.9)));
    r.push(("fc (0.5, 2)", fc_edge_weight(0.5, 2.0), 1.0));
    r.push(("fc (-0.5, 2)", fc_edge_weight(-0.5, 2.0), 1.0));
    r.push(("fc (x, 0)", fc_edge_weight(-3.3, 0.0), 0.0));
    r
}
