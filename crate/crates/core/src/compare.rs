//! Side-by-side minimality of optimized masks and Grad-CAM over a set of images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::normalize;
use crate::explain::{optimize_explanation, ExplainConfig, ExplainError, ExplanationSummary};
use crate::gradcam::{default_layer, gradcam, minimality_at_fidelity, GradCamError};
use crate::nn::ModelBundle;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("no images to compare")]
    Empty,
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    GradCam(#[from] GradCamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub input_id: String,
    pub label: usize,
    pub ours_active_fraction: f64,
    pub gradcam_fraction_at_fidelity: f64,
    pub label_preserved: bool,
    pub conf_x: f64,
    pub conf_e: f64,
    pub robustness_success_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub ours_active_fraction: f64,
    pub gradcam_fraction_at_fidelity: f64,
    pub conf_x: f64,
    pub conf_e: f64,
    pub robustness_success_rate: f64,
    pub label_preserved_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub medians: Medians,
    pub gradcam_layer: String,
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl CompareRow {
    fn new(input_id: String, s: &ExplanationSummary, gradcam_fraction: f64) -> Self {
        Self {
            input_id,
            label: s.label,
            ours_active_fraction: s.active_fraction,
            gradcam_fraction_at_fidelity: gradcam_fraction,
            label_preserved: s.label_preserved,
            conf_x: s.original_confidence,
            conf_e: s.explanation_confidence,
            robustness_success_rate: s.robustness_success_rate,
            seed: s.seed,
        }
    }
}

impl CompareReport {
    pub fn from_rows(rows: Vec<CompareRow>, gradcam_layer: String) -> Result<Self, CompareError> {
        if rows.is_empty() {
            return Err(CompareError::Empty);
        }
        let col = |f: fn(&CompareRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
        let medians = Medians {
            ours_active_fraction: col(|r| r.ours_active_fraction),
            gradcam_fraction_at_fidelity: col(|r| r.gradcam_fraction_at_fidelity),
            conf_x: col(|r| r.conf_x),
            conf_e: col(|r| r.conf_e),
            robustness_success_rate: col(|r| r.robustness_success_rate),
            label_preserved_rate: rows.iter().filter(|r| r.label_preserved).count() as f64 / rows.len() as f64,
        };
        Ok(Self { rows, medians, gradcam_layer })
    }
}

/// Explains every raw image with job seed `cfg.seed + position` and scores
/// Grad-CAM on the same image. Jobs run in parallel; rows keep input order.
pub fn compare_images(
    bundle: &ModelBundle<f32>,
    images: &[(String, Tensor<f32>)],
    cfg: &ExplainConfig,
) -> Result<CompareReport, CompareError> {
    if images.is_empty() {
        return Err(CompareError::Empty);
    }
    let layer = default_layer(bundle).ok_or_else(|| GradCamError::UnknownLayer("<none>".into()))?;
    let rows = images
        .par_iter()
        .enumerate()
        .map(|(job, (id, raw))| {
            let x = normalize(raw);
            let job_cfg = ExplainConfig { seed: cfg.seed.wrapping_add(job as u64), ..cfg.clone() };
            let ours = optimize_explanation(bundle, &x, &job_cfg)?;
            let y = ours.summary.label;
            let map = gradcam(bundle, &x, y, &layer)?;
            let fraction = minimality_at_fidelity(bundle, &x, &map, y)?;
            Ok(CompareRow::new(id.clone(), &ours.summary, fraction))
        })
        .collect::<Result<Vec<_>, CompareError>>()?;
    CompareReport::from_rows(rows, layer)
}
