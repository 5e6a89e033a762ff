//! Loss terms of the explanation objective, recorded on a tape.

use serde::{Deserialize, Serialize};

use crate::nn::TapKind;
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// One value per loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<V> {
    pub act: V,
    pub ce: V,
    pub kl: V,
    pub area: V,
    pub bin: V,
    pub tv: V,
    pub rob: V,
}

impl<V: Copy> LossTerms<V> {
    pub fn map<U>(&self, mut f: impl FnMut(V) -> U) -> LossTerms<U> {
        LossTerms {
            act: f(self.act),
            ce: f(self.ce),
            kl: f(self.kl),
            area: f(self.area),
            bin: f(self.bin),
            tv: f(self.tv),
            rob: f(self.rob),
        }
    }

    pub fn as_array(&self) -> [V; 7] {
        [self.act, self.ce, self.kl, self.area, self.bin, self.tv, self.rob]
    }
}

impl LossTerms<f64> {
    pub fn splat(v: f64) -> Self {
        Self { act: v, ce: v, kl: v, area: v, bin: v, tv: v, rob: v }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Coefficients of the composite objective plus per-tap activation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambdas: LossTerms<f64>,
    pub alpha: Vec<f64>,
}

impl LossWeights {
    pub fn new(lambdas: LossTerms<f64>, alpha: Vec<f64>) -> std::result::Result<Self, String> {
        if let Some(v) = lambdas.as_array().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(format!("loss weights must be finite and >= 0, got {v}"));
        }
        if let Some(v) = alpha.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(format!("tap weights must be finite and >= 0, got {v}"));
        }
        Ok(Self { lambdas, alpha })
    }

    /// Weighted sum of already-evaluated terms.
    pub fn total(&self, terms: &LossTerms<f64>) -> f64 {
        let l = &self.lambdas;
        l.act * terms.act
            + l.ce * terms.ce
            + l.kl * terms.kl
            + l.area * terms.area
            + l.bin * terms.bin
            + l.tv * terms.tv
            + l.rob * terms.rob
    }
}

fn check_pair(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: format!("tap shapes {a:?} vs {b:?}"),
            expected: a.iter().product(),
            found: b.iter().product(),
        });
    }
    Ok(())
}

/// `1 - cos(a, b)` for vectors, with `0` when both are zero and `1` when
/// exactly one is.
pub fn cosine_distance<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    check_pair("cosine_distance", tape.shape(a), tape.shape(b))?;
    let zero_a = tape.value(a).data().iter().all(|v| *v == T::zero());
    let zero_b = tape.value(b).data().iter().all(|v| *v == T::zero());
    match (zero_a, zero_b) {
        (true, true) => return Ok(tape.constant(Tensor::scalar(T::zero()))),
        (true, false) | (false, true) => return Ok(tape.constant(Tensor::scalar(T::one()))),
        _ => {}
    }
    let ab = tape.mul(a, b)?;
    let dot = tape.sum(ab);
    let aa = tape.square(a);
    let saa = tape.sum(aa);
    let na = tape.sqrt(saa);
    let bb = tape.square(b);
    let sbb = tape.sum(bb);
    let nb = tape.sqrt(sbb);
    let denom = tape.mul(na, nb)?;
    let cos = tape.div(dot, denom)?;
    Ok(tape.affine(cos, -T::one(), T::one()))
}

pub fn mse<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    check_pair("mse", tape.shape(a), tape.shape(b))?;
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// `Σ α_ℓ d_ℓ` with MSE for feature maps and cosine distance for vectors.
pub fn loss_act<T: Scalar>(tape: &mut Tape<T>, taps_x: &[Var], taps_e: &[Var], kinds: &[TapKind], alpha: &[f64]) -> Result<Var> {
    let n = taps_x.len();
    for (what, len) in [("explanation taps", taps_e.len()), ("tap kinds", kinds.len()), ("alpha", alpha.len())] {
        if len != n {
            return Err(TensorError::ShapeMismatch { op: "loss_act", dim: what.into(), expected: n, found: len });
        }
    }
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (((&x, &e), kind), &a) in taps_x.iter().zip(taps_e).zip(kinds).zip(alpha) {
        let d = match kind {
            TapKind::ConvMap => mse(tape, x, e)?,
            TapKind::Vector => cosine_distance(tape, x, e)?,
        };
        let w = tape.scale(d, T::from_f64(a));
        total = tape.add(total, w)?;
    }
    Ok(total)
}

/// `-log softmax(logits)[y]` for a single-row logit tensor.
pub fn loss_ce<T: Scalar>(tape: &mut Tape<T>, logits: Var, y: usize) -> Result<Var> {
    let logp = tape.log_softmax(logits);
    let picked = tape.pick(logp, &[y])?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -T::one()))
}

/// `Σ p log(p / q)` with `p` a fixed distribution and `q = softmax(logits)`.
pub fn loss_kl<T: Scalar>(tape: &mut Tape<T>, p: &Tensor<T>, logits: Var) -> Result<Var> {
    check_pair("loss_kl", p.shape(), tape.shape(logits))?;
    let entropy_term: T = p.data().iter().filter(|&&v| v > T::zero()).map(|&v| v * v.ln()).sum();
    let logq = tape.log_softmax(logits);
    let pc = tape.constant(p.clone());
    let cross = tape.mul(pc, logq)?;
    let s = tape.sum(cross);
    Ok(tape.affine(s, -T::one(), entropy_term))
}

/// Mean soft-mask value.
pub fn loss_area<T: Scalar>(tape: &mut Tape<T>, m_soft: Var) -> Var {
    tape.mean(m_soft)
}

/// Mean of `|m - m²|`, zero exactly on binary masks.
pub fn loss_bin<T: Scalar>(tape: &mut Tape<T>, m_soft: Var) -> Result<Var> {
    let sq = tape.square(m_soft);
    let d = tape.sub(m_soft, sq)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Neighbour differences over the mask's spatial axes, per pixel.
pub fn loss_tv<T: Scalar>(tape: &mut Tape<T>, m_soft: Var) -> Result<Var> {
    tape.total_variation(m_soft)
}

/// `b + m ⊙ (x - b)`: the image where `m = 1`, the background `b` elsewhere.
pub fn composite<T: Scalar>(tape: &mut Tape<T>, m: Var, x: &Tensor<T>, background: &Tensor<T>) -> Result<Var> {
    check_pair("composite", x.shape(), background.shape())?;
    check_pair("composite", tape.shape(m), x.shape())?;
    let diff = Tensor::new(x.shape().to_vec(), x.data().iter().zip(background.data()).map(|(&a, &b)| a - b).collect())?;
    let dv = tape.constant(diff);
    let bv = tape.constant(background.clone());
    let masked = tape.mul(m, dv)?;
    tape.add(masked, bv)
}

/// Weighted sum of the seven term variables.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, weights: &LossWeights, terms: &LossTerms<Var>) -> Result<Var> {
    let lambdas = weights.lambdas.as_array();
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (v, l) in terms.as_array().into_iter().zip(lambdas) {
        let w = tape.scale(v, T::from_f64(l));
        total = tape.add(total, w)?;
    }
    Ok(total)
}
