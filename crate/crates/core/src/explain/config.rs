use serde::{Deserialize, Serialize};

use super::losses::{LossTerms, LossWeights};
use super::ExplainError;

/// Loss weights and optimizer settings for one explanation run, in the
/// on-disk JSON layout. Missing keys take the defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub lambda_act: f64,
    pub lambda_ce: f64,
    pub lambda_kl: f64,
    pub lambda_area: f64,
    pub lambda_bin: f64,
    pub lambda_tv: f64,
    pub lambda_rob: f64,
    /// Per-tap activation weights; empty means 1.0 for every tap.
    pub alpha: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

/// MNIST weights: act 0.6, CE 4.0, KL 0.54, area 100, bin 1.2, TV 50, rob 10.
pub const MNIST_LAMBDAS: LossTerms<f64> = LossTerms { act: 0.6, ce: 4.0, kl: 0.54, area: 100.0, bin: 1.2, tv: 50.0, rob: 10.0 };

pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_LR: f64 = 1e-3;

impl Default for ExplainConfig {
    fn default() -> Self {
        Self::from_lambdas(&MNIST_LAMBDAS)
    }
}

impl ExplainConfig {
    pub fn from_lambdas(l: &LossTerms<f64>) -> Self {
        Self {
            lambda_act: l.act,
            lambda_ce: l.ce,
            lambda_kl: l.kl,
            lambda_area: l.area,
            lambda_bin: l.bin,
            lambda_tv: l.tv,
            lambda_rob: l.rob,
            alpha: Vec::new(),
            steps: DEFAULT_STEPS,
            lr: DEFAULT_LR,
            seed: 0,
        }
    }

    pub fn lambdas(&self) -> LossTerms<f64> {
        LossTerms {
            act: self.lambda_act,
            ce: self.lambda_ce,
            kl: self.lambda_kl,
            area: self.lambda_area,
            bin: self.lambda_bin,
            tv: self.lambda_tv,
            rob: self.lambda_rob,
        }
    }

    pub fn set_lambdas(&mut self, l: &LossTerms<f64>) {
        let keep = (std::mem::take(&mut self.alpha), self.steps, self.lr, self.seed);
        *self = Self::from_lambdas(l);
        (self.alpha, self.steps, self.lr, self.seed) = keep;
    }

    pub fn from_json(text: &str) -> Result<Self, ExplainError> {
        serde_json::from_str(text).map_err(|e| ExplainError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validated weights for a model with `n_taps` taps.
    pub fn weights(&self, n_taps: usize) -> Result<LossWeights, ExplainError> {
        if self.steps == 0 {
            return Err(ExplainError::Config("steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(ExplainError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        let alpha = if self.alpha.is_empty() { vec![1.0; n_taps] } else { self.alpha.clone() };
        if alpha.len() != n_taps {
            return Err(ExplainError::Config(format!("alpha has {} entries but the model has {n_taps} taps", alpha.len())));
        }
        LossWeights::new(self.lambdas(), alpha).map_err(ExplainError::Config)
    }
}
