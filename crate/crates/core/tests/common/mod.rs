//! Shared oracles for the integration tests: central finite differences,
//! nested-loop reference kernels, random tensors, and tiny IDX fixtures.

#![allow(dead_code)]

pub mod circuit_oracle;
pub mod closed_forms;
pub mod fd_suite;

use std::path::Path;

use actmatch::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-3;
pub const SEEDS: u64 = 10;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

#[derive(Debug)]
pub enum FdOutcome {
    /// Largest relative error over all checked coordinates.
    Checked { max_rel: f64, coords: usize },
    /// The point lies within the kink margin of a non-smooth operation.
    NearKink(f64),
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn eval(f: &impl Fn(&mut Tape<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Compares the tape's gradient of the scalar `f(inputs)` with respect to
/// every element of every input against central differences.
pub fn fd_check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> FdOutcome {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    if let Some(m) = tape.kink_margin() {
        if m < KINK_MARGIN {
            return FdOutcome::NearKink(m);
        }
    }
    tape.backward(out).expect("scalar output");
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])).collect();

    let mut max_rel = 0.0f64;
    let mut coords = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&f, &work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&f, &work);
            work[k].data_mut()[i] = orig;
            let n = (up - down) / (2.0 * FD_STEP);
            max_rel = max_rel.max(rel_err(a, n));
            coords += 1;
        }
    }
    FdOutcome::Checked { max_rel, coords }
}

/// Runs `fd_check` on fresh draws until one clears the kink margin, for each
/// of `SEEDS` seeds. Returns the largest error seen.
pub fn fd_over_seeds(
    tag: &str,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed.wrapping_mul(0x9e37_79b9).wrapping_add(tag.len() as u64));
        let mut attempts = 0;
        loop {
            attempts += 1;
            assert!(attempts <= 500, "{tag}: no draw cleared the kink margin");
            match fd_check(&draw(&mut r), &f) {
                FdOutcome::NearKink(_) => continue,
                FdOutcome::Checked { max_rel, coords } => {
                    assert!(coords > 0, "{tag}: nothing to check");
                    worst = worst.max(max_rel);
                    break;
                }
            }
        }
    }
    worst
}

/// Direct seven-loop cross-correlation.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let yi = (i * stride + di) as isize - pad as isize;
                                let xj = (j * stride + dj) as isize - pad as isize;
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ic) * h + yi as usize) * wd + xj as usize];
                                let wv = w.data()[((oc * c + ic) * kh + di) * kw + dj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oc) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, ho, wo], out).unwrap()
}

pub fn naive_linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        for k in 0..o {
            let mut acc = b.data()[k];
            for j in 0..f {
                acc += x.data()[r * f + j] * w.data()[k * f + j];
            }
            out[r * o + k] = acc;
        }
    }
    Tensor::new(vec![n, o], out).unwrap()
}

pub fn naive_maxpool(x: &Tensor<f64>, k: usize, stride: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::new();
    for p in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for a in 0..k {
                    for b in 0..k {
                        m = m.max(x.data()[p * h * w + (i * stride + a) * w + j * stride + b]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y} (tol {tol})");
    }
}

/// Writes a miniature MNIST directory: `n_train` and `n_test` 28x28 images of
/// simple class-dependent patterns.
pub fn write_tiny_mnist(dir: &Path, n_train: usize, n_test: usize) {
    fn images(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
        let mut r = rng(seed);
        let mut img = vec![0, 0, 8, 3];
        for d in [n as u32, 28, 28] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        let mut lab = vec![0, 0, 8, 1];
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            let class = (i % 10) as u8;
            lab.push(class);
            for y in 0..28usize {
                for x in 0..28usize {
                    // A bar whose row depends on the class, plus light noise.
                    let on = y / 3 == class as usize && (4..24).contains(&x);
                    let v: u8 = if on { 255 } else { r.gen_range(0..20) };
                    img.push(v);
                }
            }
        }
        (img, lab)
    }
    std::fs::create_dir_all(dir).unwrap();
    let (ti, tl) = images(n_train, 1);
    let (vi, vl) = images(n_test, 2);
    std::fs::write(dir.join("train-images-idx3-ubyte"), ti).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), tl).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), vi).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), vl).unwrap();
}
