//! The frozen classifier, the mask autoencoder, activation taps, and
//! classifier training.

mod autoencoder;
mod classifier;
mod train;
pub mod weights;

pub use autoencoder::{BoundAutoencoder, MaskAutoencoder, MASK_EPS};
pub use classifier::{BoundClassifier, ClassifierCnn, ClassifierTrace, ConvLayer};
pub use train::{evaluate_accuracy, train_classifier, TrainConfig, TrainReport};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{softmax_rows, Scalar, Tape, Tensor, TensorError, Var};
use weights::WeightError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid tap {layer:?}: {reason}")]
    Tap { layer: String, reason: String },
    #[error("{0}")]
    Training(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapKind {
    /// A `[1, C, H, W]` post-ReLU feature map.
    ConvMap,
    /// A `[1, F]` feature vector.
    Vector,
}

/// A layer whose activation is compared between the image and its explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapDescriptor {
    /// `conv1`, `conv2`, ... for conv blocks, `h` for the head's input.
    pub layer: String,
    pub kind: TapKind,
}

impl TapDescriptor {
    pub fn conv(index: usize) -> Self {
        Self { layer: format!("conv{index}"), kind: TapKind::ConvMap }
    }

    pub fn h() -> Self {
        Self { layer: "h".into(), kind: TapKind::Vector }
    }

    /// Zero-based conv block index for conv taps.
    pub fn conv_index(&self) -> Option<usize> {
        self.layer.strip_prefix("conv")?.parse::<usize>().ok()?.checked_sub(1)
    }
}

/// Resolved tap values from one forward pass.
#[derive(Debug, Clone)]
pub struct TappedVars {
    pub logits: Var,
    pub taps: Vec<Var>,
    pub h: Var,
    pub trace: ClassifierTrace,
}

/// Plain-tensor result of [`ModelBundle::forward_with_taps`].
#[derive(Debug, Clone, PartialEq)]
pub struct TappedOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub taps: Vec<Tensor<T>>,
    pub h: Tensor<T>,
}

/// A frozen classifier plus the ordered list of layers it exposes as taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T: Scalar = f32> {
    classifier: ClassifierCnn<T>,
    taps: Vec<TapDescriptor>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(classifier: ClassifierCnn<T>, taps: Vec<TapDescriptor>) -> Result<Self, ModelError> {
        let n_convs = classifier.convs().len();
        for tap in &taps {
            let bad = |reason: &str| ModelError::Tap { layer: tap.layer.clone(), reason: reason.into() };
            match (tap.layer.as_str(), tap.conv_index()) {
                ("h", _) if tap.kind != TapKind::Vector => return Err(bad("h is a vector layer")),
                ("h", _) => {}
                (_, Some(i)) if i < n_convs => {
                    if tap.kind != TapKind::ConvMap {
                        return Err(bad("conv layers produce feature maps"));
                    }
                }
                (_, Some(_)) => return Err(bad("no such conv layer")),
                _ => return Err(bad("unknown layer name")),
            }
        }
        Ok(Self { classifier, taps })
    }

    /// Every post-ReLU conv output followed by `h`.
    pub fn with_default_taps(classifier: ClassifierCnn<T>) -> Self {
        let mut taps: Vec<_> = (1..=classifier.convs().len()).map(TapDescriptor::conv).collect();
        taps.push(TapDescriptor::h());
        Self::new(classifier, taps).expect("default taps are valid")
    }

    pub fn classifier(&self) -> &ClassifierCnn<T> {
        &self.classifier
    }

    pub fn taps(&self) -> &[TapDescriptor] {
        &self.taps
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle { classifier: self.classifier.cast(), taps: self.taps.clone() }
    }

    /// Records the weights as constants: the classifier never accumulates gradients.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundClassifier {
        self.classifier.bind(tape, false)
    }

    pub fn trace(&self, tape: &mut Tape<T>, bound: &BoundClassifier, x: Var) -> Result<TappedVars, ModelError> {
        let trace = bound.forward(&self.classifier, tape, x)?;
        let taps = self
            .taps
            .iter()
            .map(|t| match t.conv_index() {
                Some(i) => trace.convs[i],
                None => trace.h,
            })
            .collect();
        Ok(TappedVars { logits: trace.logits, taps, h: trace.h, trace })
    }

    pub fn forward_with_taps(&self, x: &Tensor<T>) -> Result<TappedOutput<T>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.trace(&mut tape, &bound, xv)?;
        Ok(TappedOutput {
            logits: tape.value(out.logits).clone(),
            taps: out.taps.iter().map(|&v| tape.value(v).clone()).collect(),
            h: tape.value(out.h).clone(),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let trace = bound.forward(&self.classifier, &mut tape, xv)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Predicted class and its softmax probability for a single image.
    pub fn predict(&self, x: &Tensor<T>) -> Result<(usize, T), ModelError> {
        let p = softmax_rows(&self.forward(x)?);
        let y = p.argmax();
        Ok((y, p.data()[y]))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        Ok(weights::encode(&self.classifier.to_named())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let classifier = ClassifierCnn::<f32>::from_named(weights::decode(bytes)?)?.cast();
        Ok(Self::with_default_taps(classifier))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        crate::io::write_atomic(path.as_ref(), &bytes).map_err(WeightError::Io)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(WeightError::Io)?;
        Self::from_bytes(&bytes)
    }
}
