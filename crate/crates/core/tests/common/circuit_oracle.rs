//! Dense-enumeration oracle for the circuit readout on a small hand-built
//! two-block network.

use actmatch::circuit::{build_circuit, select_topk, CircuitGraph, EdgeKind};
use actmatch::nn::{ClassifierCnn, ConvLayer, ModelBundle};
use actmatch::tensor::Tensor;
use rand::Rng;

use super::{naive_conv2d, naive_linear, naive_maxpool, rng};

fn pattern(shape: &[usize], a: f64, b: f64, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| scale * (a * i as f64 + b).sin())
}

/// 1→2→3 channels of 3x3 kernels on a 6x6 input, pool after the first block,
/// 3·3·3 → 3 linear head.
pub fn hand_built() -> (ModelBundle<f64>, Tensor<f64>) {
    let c1 = ConvLayer { weight: pattern(&[2, 1, 3, 3], 1.3, 0.7, 0.8), bias: Tensor::new(vec![2], vec![0.1, -0.05]).unwrap() };
    let c2 = ConvLayer { weight: pattern(&[3, 2, 3, 3], 0.9, 0.2, 0.6), bias: Tensor::new(vec![3], vec![0.05, 0.2, -0.1]).unwrap() };
    let fc_w = pattern(&[3, 27], 2.1, 1.1, 0.5);
    let fc_b = Tensor::new(vec![3], vec![0.0, 0.1, -0.1]).unwrap();
    let model = ClassifierCnn::from_layers(vec![c1, c2], fc_w, fc_b).unwrap();
    let x = Tensor::from_fn(vec![1, 1, 6, 6], |i| ((i * 7 % 13) as f64) / 6.0 - 0.5);
    (ModelBundle::with_default_taps(model), x)
}

fn relu(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v.max(0.0))
}

fn l2_per_channel(t: &[f64], c: usize) -> Vec<f64> {
    let per = t.len() / c;
    (0..c).map(|ch| t[ch * per..(ch + 1) * per].iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Everything the graph should contain, computed with nested loops.
pub struct Expected {
    pub class: usize,
    pub energy: [Vec<f64>; 2],
    pub grad: [Vec<f64>; 2],
    /// `[d][s]` forward and gradient conv edge weights.
    pub fwd: Vec<Vec<f64>>,
    pub bwd: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub fc: Vec<f64>,
    pub fc_grad: Vec<f64>,
}

pub fn enumerate(bundle: &ModelBundle<f64>, x: &Tensor<f64>) -> Expected {
    let m = bundle.classifier();
    let (c1, c2) = (&m.convs()[0], &m.convs()[1]);
    let z1 = naive_conv2d(x, &c1.weight, &c1.bias, 1, 1);
    let a1 = relu(&z1);
    let p1 = naive_maxpool(&a1, 2, 2);
    let z2 = naive_conv2d(&p1, &c2.weight, &c2.bias, 1, 1);
    let a2 = relu(&z2);
    let h = Tensor::new(vec![1, 27], a2.data().to_vec()).unwrap();
    let logits = naive_linear(&h, m.fc_weight(), m.fc_bias());
    let mut class = 0;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > logits.data()[class] {
            class = i;
        }
    }
    let w_y: Vec<f64> = m.fc_weight().data()[class * 27..(class + 1) * 27].to_vec();

    // d logit / d a2 is the head row; route it back through relu, conv2 and
    // the pooling argmax.
    let g_a2 = w_y.clone();
    let g_z2: Vec<f64> = g_a2.iter().zip(z2.data()).map(|(g, &z)| if z > 0.0 { *g } else { 0.0 }).collect();
    let mut g_p1 = [0.0; 2 * 9];
    for d in 0..3 {
        for oi in 0..3usize {
            for oj in 0..3usize {
                let g = g_z2[d * 9 + oi * 3 + oj];
                for s in 0..2 {
                    for di in 0..3usize {
                        for dj in 0..3usize {
                            let (ii, jj) = (oi as isize + di as isize - 1, oj as isize + dj as isize - 1);
                            if (0..3).contains(&ii) && (0..3).contains(&jj) {
                                g_p1[s * 9 + ii as usize * 3 + jj as usize] += g * c2.weight.data()[((d * 2 + s) * 3 + di) * 3 + dj];
                            }
                        }
                    }
                }
            }
        }
    }
    let mut g_a1 = vec![0.0; 2 * 36];
    for s in 0..2 {
        for pi in 0..3 {
            for pj in 0..3 {
                let mut best = (pi * 2, pj * 2);
                for a in 0..2 {
                    for b in 0..2 {
                        let (i, j) = (pi * 2 + a, pj * 2 + b);
                        if a1.data()[s * 36 + i * 6 + j] > a1.data()[s * 36 + best.0 * 6 + best.1] {
                            best = (i, j);
                        }
                    }
                }
                g_a1[s * 36 + best.0 * 6 + best.1] += g_p1[s * 9 + pi * 3 + pj];
            }
        }
    }

    let energy = [l2_per_channel(a1.data(), 2), l2_per_channel(a2.data(), 3)];
    let grad = [l2_per_channel(&g_a1, 2), l2_per_channel(&g_a2, 3)];
    let mut fwd = vec![vec![0.0; 2]; 3];
    let mut bwd = vec![vec![0.0; 2]; 3];
    for d in 0..3 {
        for s in 0..2 {
            let mut l1 = 0.0;
            for t in 0..9 {
                l1 += c2.weight.data()[(d * 2 + s) * 9 + t].abs();
            }
            fwd[d][s] = l1 * energy[0][s];
            bwd[d][s] = l1 * grad[1][d];
        }
    }
    let fc: Vec<f64> = (0..27).map(|j| (w_y[j] * h.data()[j]).abs()).collect();
    let fc_grad: Vec<f64> = w_y.iter().map(|w| w * w).collect();
    Expected { class, energy, grad, fwd, bwd, h: h.data().iter().map(|v| v.abs()).collect(), fc, fc_grad }
}

/// Largest absolute deviation between the extracted graph (k large enough to
/// keep everything) and the oracle, plus a description of the first
/// structural mismatch, if any.
pub fn max_circuit_error() -> (f64, Option<String>) {
    let (bundle, x) = hand_built();
    let want = enumerate(&bundle, &x);
    let g: CircuitGraph = build_circuit(&bundle, &x, 27, "hand-built").unwrap();
    let mut err = 0.0f64;
    let mut note = |a: f64, b: f64| err = err.max((a - b).abs());
    if g.meta.class != want.class {
        return (f64::INFINITY, Some(format!("class {} vs {}", g.meta.class, want.class)));
    }
    for layer in 0..2 {
        for (c, (&e, &gr)) in want.energy[layer].iter().zip(&want.grad[layer]).enumerate() {
            let Some(n) = g.node(layer, c) else { return (f64::INFINITY, Some(format!("missing node {layer}:{c}"))) };
            note(n.energy, e);
            note(n.grad, gr);
        }
    }
    for d in 0..3 {
        for s in 0..2 {
            let f = g.edge([0, s], [1, d], EdgeKind::Forward);
            let b = g.edge([0, s], [1, d], EdgeKind::Gradient);
            let (Some(f), Some(b)) = (f, b) else { return (f64::INFINITY, Some(format!("missing edge 0:{s} -> 1:{d}"))) };
            note(f.weight, want.fwd[d][s]);
            note(b.weight, want.bwd[d][s]);
        }
    }
    for j in 0..27 {
        let (src, dst) = ([2, j], [3, want.class]);
        let Some(n) = g.node(2, j) else { return (f64::INFINITY, Some(format!("missing feature node {j}"))) };
        note(n.energy, want.h[j]);
        let f = g.edge(src, dst, EdgeKind::Forward);
        let b = g.edge(src, dst, EdgeKind::Gradient);
        let (Some(f), Some(b)) = (f, b) else { return (f64::INFINITY, Some(format!("missing feature edge {j}"))) };
        note(f.weight, want.fc[j]);
        note(b.weight, want.fc_grad[j]);
    }
    (err, None)
}

/// Compares `select_topk` with a full sort on `n` random instances, including
/// ties. Returns the number of disagreements.
pub fn topk_mismatches(n: u64) -> usize {
    let mut bad = 0;
    for seed in 0..n {
        let mut r = rng(1000 + seed);
        let len = r.gen_range(1..40);
        // Coarse values so ties are common.
        let scores: Vec<f64> = (0..len).map(|_| (r.gen_range(0..12) as f64) * 0.25).collect();
        let k = r.gen_range(1..len + 3);
        let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = pairs.iter().take(k).map(|p| p.1).collect();
        if select_topk(&scores, k).unwrap() != want {
            bad += 1;
        }
    }
    bad
}
