//! Mask optimization: the loss terms, straight-through binarization, and the
//! per-image loop that trains a fresh autoencoder against the frozen classifier.
//!
//! Masks act in raw pixel space: a pixel outside the mask becomes black
//! (raw 0, i.e. `normalize(0)` in the classifier's input space), and the
//! robustness composite fills it from a Gaussian background instead.

mod config;
mod losses;

pub use config::{ExplainConfig, DEFAULT_LR, DEFAULT_STEPS, MNIST_LAMBDAS};
pub use losses::{
    composite, cosine_distance, loss_act, loss_area, loss_bin, loss_ce, loss_kl, loss_tv, mse, total_loss, LossTerms, LossWeights,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{normalize, normalized_range, BackgroundSampler, DataError};
use crate::nn::{BoundClassifier, MaskAutoencoder, ModelBundle, ModelError, TapKind};
use crate::tensor::{softmax_rows, Adam, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid explanation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss or gradient at step {step}: {terms:?}")]
    NonFinite { step: usize, terms: LossTerms<f64> },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// Soft masks above this value binarize to 1.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Initial logit of the autoencoder's output layer; a positive value starts
/// every run from a mostly-full mask that the area prior then shrinks.
pub const INIT_MASK_LOGIT: f64 = 1.0;
/// Gain on the mask head's initial weights. At the default init the head
/// barely varies across pixels and the priors shrink the mask uniformly.
pub const INIT_HEAD_GAIN: f64 = 10.0;

/// Background draws used for the robustness rate reported with each result.
pub const DEFAULT_ROBUSTNESS_DRAWS: usize = 20;

/// Strict `> 0.5` threshold applied to plain values.
pub fn binarize<T: Scalar>(m_soft: &Tensor<T>) -> Tensor<T> {
    let t = T::from_f64(MASK_THRESHOLD);
    m_soft.map(|v| if v > t { T::one() } else { T::zero() })
}

/// The straight-through binarization recorded on a tape.
pub fn binarize_ste<T: Scalar>(tape: &mut Tape<T>, m_soft: Var) -> Var {
    tape.straight_through(m_soft, T::from_f64(MASK_THRESHOLD))
}

/// Black background expressed in the classifier's normalized input space.
pub fn black_background<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape.to_vec(), T::from_f64(normalized_range().0))
}

/// `m ⊙ x` evaluated on plain tensors, with `x` normalized.
pub fn apply_mask<T: Scalar>(m: &Tensor<T>, x: &Tensor<T>, background: &Tensor<T>) -> Tensor<T> {
    let data = m.data().iter().zip(x.data()).zip(background.data()).map(|((&m, &x), &b)| b + m * (x - b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Everything about the original image that stays fixed during optimization.
#[derive(Debug, Clone)]
pub struct Reference<T: Scalar> {
    /// Normalized image.
    pub x: Tensor<T>,
    pub taps: Vec<Tensor<T>>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub label: usize,
    pub confidence: T,
}

impl<T: Scalar> Reference<T> {
    pub fn new(bundle: &ModelBundle<T>, x: &Tensor<T>) -> Result<Self> {
        let out = bundle.forward_with_taps(x)?;
        let probs = softmax_rows(&out.logits);
        let label = probs.argmax();
        let confidence = probs.data()[label];
        Ok(Self { x: x.clone(), taps: out.taps, logits: out.logits, probs, label, confidence })
    }
}

/// Tape handles of one evaluation of the composite objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Var,
    pub terms: LossTerms<Var>,
    pub e: Var,
    pub e_rob: Var,
    pub logits_e: Var,
    pub logits_rob: Var,
}

impl Objective {
    pub fn term_values<T: Scalar>(&self, tape: &Tape<T>) -> LossTerms<f64> {
        self.terms.map(|v| tape.value(v).item().as_f64())
    }
}

/// Records every loss term for soft mask `m_soft` and binary mask `m`.
/// The mask priors see `m_soft`; the explanation `e` and the robustness
/// composite see `m`.
#[allow(clippy::too_many_arguments)]
pub fn record_objective<T: Scalar>(
    tape: &mut Tape<T>,
    bundle: &ModelBundle<T>,
    classifier: &BoundClassifier,
    reference: &Reference<T>,
    m_soft: Var,
    m: Var,
    background: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Objective> {
    let x = &reference.x;
    let black = black_background(x.shape());
    let e = composite(tape, m, x, &black)?;
    let e_out = bundle.trace(tape, classifier, e)?;
    let taps_x: Vec<Var> = reference.taps.iter().map(|t| tape.constant(t.clone())).collect();
    let kinds: Vec<TapKind> = bundle.taps().iter().map(|t| t.kind).collect();

    let act = loss_act(tape, &taps_x, &e_out.taps, &kinds, &weights.alpha)?;
    let ce = loss_ce(tape, e_out.logits, reference.label)?;
    let kl = loss_kl(tape, &reference.probs, e_out.logits)?;
    let area = loss_area(tape, m_soft);
    let bin = loss_bin(tape, m_soft)?;
    let tv = loss_tv(tape, m_soft)?;

    let e_rob = composite(tape, m, x, background)?;
    let rob_trace = classifier.forward(bundle.classifier(), tape, e_rob)?;
    let rob = loss_ce(tape, rob_trace.logits, reference.label)?;

    let terms = LossTerms { act, ce, kl, area, bin, tv, rob };
    let total = total_loss(tape, weights, &terms)?;
    Ok(Objective { total, terms, e, e_rob, logits_e: e_out.logits, logits_rob: rob_trace.logits })
}

/// `f(m ⊙ x + (1 - m) ⊙ r)` cross-entropy at `y`, evaluated on plain tensors.
pub fn loss_rob_value<T: Scalar>(bundle: &ModelBundle<T>, m: &Tensor<T>, x: &Tensor<T>, r: &Tensor<T>, y: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let mv = tape.constant(m.clone());
    let e = composite(&mut tape, mv, x, r)?;
    let trace = bound.forward(bundle.classifier(), &mut tape, e)?;
    let ce = loss_ce(&mut tape, trace.logits, y)?;
    Ok(tape.value(ce).item().as_f64())
}

/// JSON-facing summary of one explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub label: usize,
    pub original_confidence: f64,
    pub explanation_label: usize,
    pub explanation_confidence: f64,
    pub label_preserved: bool,
    pub active_fraction: f64,
    pub active_pixels: usize,
    pub final_terms: LossTerms<f64>,
    pub final_loss: f64,
    pub robustness_success_rate: f64,
    pub robustness_draws: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExplanationResult {
    /// Normalized input image.
    pub image: Tensor<f32>,
    pub m_soft: Tensor<f32>,
    /// Binary mask in {0, 1}.
    pub mask: Tensor<f32>,
    /// Normalized explanation fed to the classifier.
    pub explanation: Tensor<f32>,
    pub summary: ExplanationSummary,
}

impl ExplanationResult {
    /// The explanation in raw `[0, 1]` pixel space.
    pub fn explanation_raw(&self) -> Tensor<f32> {
        crate::data::denormalize(&self.explanation).map(|v| v.clamp(0.0, 1.0))
    }
}

/// Draws used by one explanation job: the autoencoder initialisation and
/// the background stream are both derived from the job seed.
fn job_streams(seed: u64) -> (u64, BackgroundSampler) {
    (seed, BackgroundSampler::standard(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Fraction of ones in a binary mask.
pub fn active_fraction<T: Scalar>(mask: &Tensor<T>) -> (usize, f64) {
    let on = mask.data().iter().filter(|&&v| v > T::from_f64(MASK_THRESHOLD)).count();
    (on, on as f64 / mask.numel() as f64)
}

/// Trains a fresh mask autoencoder on `x` (normalized, `[1, 1, H, W]`) and
/// returns the final binary explanation.
pub fn optimize_explanation(bundle: &ModelBundle<f32>, x: &Tensor<f32>, cfg: &ExplainConfig) -> Result<ExplanationResult> {
    let ae = MaskAutoencoder::<f32>::new(x.shape()[1], cfg.seed).with_output_bias(INIT_MASK_LOGIT).with_output_weight_gain(INIT_HEAD_GAIN);
    optimize_with_autoencoder(bundle, x, cfg, ae)
}

/// [`optimize_explanation`] starting from a caller-supplied autoencoder.
pub fn optimize_with_autoencoder(
    bundle: &ModelBundle<f32>,
    x: &Tensor<f32>,
    cfg: &ExplainConfig,
    ae: MaskAutoencoder<f32>,
) -> Result<ExplanationResult> {
    let mut job = ExplainJob::new(bundle, x, cfg, ae)?;
    for _ in 0..cfg.steps {
        job.step()?;
    }
    job.finish()
}

/// Loss values and mask size after one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub terms: LossTerms<f64>,
    pub total: f64,
    /// Active fraction of the binary mask the step was evaluated on.
    pub active_fraction: f64,
}

/// One explanation run, advanced a step at a time.
pub struct ExplainJob<'a> {
    bundle: &'a ModelBundle<f32>,
    reference: Reference<f32>,
    weights: LossWeights,
    ae: MaskAutoencoder<f32>,
    adam: Adam<f32>,
    sampler: BackgroundSampler,
    steps_done: usize,
    seed: u64,
}

struct Evaluated {
    tape: Tape<f32>,
    params: Vec<Var>,
    m_soft: Var,
    m: Var,
    obj: Objective,
}

impl<'a> ExplainJob<'a> {
    pub fn new(bundle: &'a ModelBundle<f32>, x: &Tensor<f32>, cfg: &ExplainConfig, ae: MaskAutoencoder<f32>) -> Result<Self> {
        if x.rank() != 4 || x.shape()[0] != 1 {
            return Err(ExplainError::InvalidArgument(format!("expected a single [1, C, H, W] image, got {:?}", x.shape())));
        }
        let weights = cfg.weights(bundle.taps().len())?;
        let reference = Reference::new(bundle, x)?;
        let (_, sampler) = job_streams(cfg.seed);
        let adam = Adam::<f32>::with_lr(cfg.lr)?;
        Ok(Self { bundle, reference, weights, ae, adam, sampler, steps_done: 0, seed: cfg.seed })
    }

    /// Replaces the Adam state, e.g. to change the moment decay rates.
    pub fn set_optimizer(&mut self, adam: Adam<f32>) {
        self.adam = adam;
    }

    pub fn reference(&self) -> &Reference<f32> {
        &self.reference
    }

    pub fn autoencoder(&self) -> &MaskAutoencoder<f32> {
        &self.ae
    }

    fn evaluate(&mut self) -> Result<Evaluated> {
        let x = &self.reference.x;
        let r = self.sampler.sample::<f32>(x.shape());
        let mut tape = Tape::new();
        let classifier = self.bundle.bind(&mut tape);
        let bound = self.ae.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let m_soft = bound.forward(&mut tape, xv)?;
        let m = binarize_ste(&mut tape, m_soft);
        let obj = record_objective(&mut tape, self.bundle, &classifier, &self.reference, m_soft, m, &r, &self.weights)?;
        let terms = obj.term_values(&tape);
        if !tape.value(obj.total).item().is_finite() || !terms.is_finite() {
            return Err(ExplainError::NonFinite { step: self.steps_done, terms });
        }
        Ok(Evaluated { tape, params: bound.params(), m_soft, m, obj })
    }

    /// Samples a background, evaluates the objective, and updates the autoencoder.
    pub fn step(&mut self) -> Result<StepStats> {
        let Evaluated { mut tape, params, m, obj, .. } = self.evaluate()?;
        tape.backward(obj.total)?;
        let grads: Vec<Vec<f32>> =
            params.iter().map(|&p| tape.grad(p).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(p).numel()])).collect();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(ExplainError::NonFinite { step: self.steps_done, terms: obj.term_values(&tape) });
        }
        let refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
        self.adam.step(&mut self.ae.params_mut(), &refs)?;
        let stats = StepStats {
            step: self.steps_done,
            terms: obj.term_values(&tape),
            total: tape.value(obj.total).item() as f64,
            active_fraction: active_fraction(tape.value(m)).1,
        };
        self.steps_done += 1;
        Ok(stats)
    }

    /// Evaluates the final mask (one more background draw for the reported
    /// terms) and scores robustness on fresh backgrounds.
    pub fn finish(mut self) -> Result<ExplanationResult> {
        let Evaluated { tape, m_soft, m, obj, .. } = self.evaluate()?;
        let probs_e = softmax_rows(tape.value(obj.logits_e));
        let mask = tape.value(m).clone();
        let (active_pixels, fraction) = active_fraction(&mask);
        let explanation_label = probs_e.argmax();
        let label = self.reference.label;
        let mut result = ExplanationResult {
            image: self.reference.x.clone(),
            m_soft: tape.value(m_soft).clone(),
            mask,
            explanation: tape.value(obj.e).clone(),
            summary: ExplanationSummary {
                label,
                original_confidence: self.reference.confidence as f64,
                explanation_label,
                explanation_confidence: probs_e.data()[label] as f64,
                label_preserved: explanation_label == label,
                active_fraction: fraction,
                active_pixels,
                final_terms: obj.term_values(&tape),
                final_loss: tape.value(obj.total).item() as f64,
                robustness_success_rate: f64::NAN,
                robustness_draws: DEFAULT_ROBUSTNESS_DRAWS,
                steps: self.steps_done,
                seed: self.seed,
            },
        };
        let metrics = evaluate_explanation(self.bundle, &result, DEFAULT_ROBUSTNESS_DRAWS, self.seed.wrapping_add(1))?;
        result.summary.robustness_success_rate = metrics.robustness_success_rate;
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMetrics {
    pub label_preserved: bool,
    pub confidence_x: f64,
    pub confidence_e: f64,
    pub active_fraction: f64,
    pub robustness_success_rate: f64,
    pub n_backgrounds: usize,
}

/// Re-scores an explanation: label preservation, confidences, and the fraction
/// of `n_backgrounds` fresh backgrounds under which `argmax f(ẽ) = y`.
pub fn evaluate_explanation(
    bundle: &ModelBundle<f32>,
    result: &ExplanationResult,
    n_backgrounds: usize,
    seed: u64,
) -> Result<ExplanationMetrics> {
    evaluate_mask(bundle, &result.image, &result.mask, n_backgrounds, seed)
}

pub fn evaluate_mask(
    bundle: &ModelBundle<f32>,
    x: &Tensor<f32>,
    mask: &Tensor<f32>,
    n_backgrounds: usize,
    seed: u64,
) -> Result<ExplanationMetrics> {
    if n_backgrounds < 1 {
        return Err(ExplainError::InvalidArgument("n_backgrounds must be >= 1".into()));
    }
    let (y, confidence_x) = bundle.predict(x)?;
    let e = apply_mask(mask, x, &black_background(x.shape()));
    let probs_e = softmax_rows(&bundle.forward(&e)?);
    let mut sampler = BackgroundSampler::standard(seed);
    let mut hits = 0;
    for _ in 0..n_backgrounds {
        let r = sampler.sample::<f32>(x.shape());
        let (pred, _) = bundle.predict(&apply_mask(mask, x, &r))?;
        hits += usize::from(pred == y);
    }
    Ok(ExplanationMetrics {
        label_preserved: probs_e.argmax() == y,
        confidence_x: confidence_x as f64,
        confidence_e: probs_e.data()[y] as f64,
        active_fraction: active_fraction(mask).1,
        robustness_success_rate: hits as f64 / n_backgrounds as f64,
        n_backgrounds,
    })
}

/// Normalizes a raw image for [`optimize_explanation`].
pub fn prepare_image(raw: &Tensor<f32>) -> Tensor<f32> {
    normalize(raw)
}
