use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierCnn, ModelBundle, ModelError};
use crate::data::{normalize, Dataset};
use crate::tensor::{Adam, Tape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 3, lr: 1e-3, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    pub test_accuracy: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_samples: usize,
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Predicted class of the first few test images, for later cross-checks.
    pub test_predictions: Vec<usize>,
}

pub const RECORDED_PREDICTIONS: usize = 32;

fn batch(ds: &Dataset, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
    let per: usize = ds.image_shape().iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&ds.images().data()[i * per..(i + 1) * per]);
    }
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(ds.image_shape());
    let x = Tensor::new(shape, data).expect("batch shape");
    (normalize(&x), idx.iter().map(|&i| ds.label(i)).collect())
}

/// Predicted labels for every image of `ds`.
pub fn predict_all(bundle: &ModelBundle<f32>, ds: &Dataset, batch_size: usize) -> Result<Vec<usize>, ModelError> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = batch(ds, chunk);
        let logits = bundle.forward(&x)?;
        let k = bundle.num_classes();
        out.extend(logits.data().chunks(k).map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        }));
    }
    Ok(out)
}

pub fn evaluate_accuracy(bundle: &ModelBundle<f32>, ds: &Dataset) -> Result<f64, ModelError> {
    if ds.is_empty() {
        return Err(ModelError::Training("empty evaluation set".into()));
    }
    let pred = predict_all(bundle, ds, 256)?;
    let correct = pred.iter().enumerate().filter(|&(i, &p)| p == ds.label(i)).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Minibatch Adam on mean cross-entropy with seed-controlled initialisation
/// and shuffling. Returns the frozen bundle and its test-set report.
pub fn train_classifier(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle<f32>, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::Training("empty training set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ModelError::Training("epochs and batch size must be >= 1".into()));
    }
    let mut model = ClassifierCnn::<f32>::mnist(cfg.seed);
    let mut adam = Adam::with_lr(cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let (x, labels) = batch(train, idx);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let trace = bound.forward(&model, &mut tape, xv)?;
            let logp = tape.log_softmax(trace.logits);
            let picked = tape.pick(logp, &labels)?;
            let mean = tape.mean(picked);
            let loss = tape.scale(mean, -1.0);
            tape.backward(loss)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(ModelError::Training(format!("non-finite training loss at batch {batches}")));
            }
            total += value;
            batches += 1;
            let grads: Vec<Vec<f32>> = bound
                .params()
                .iter()
                .map(|&p| tape.grad(p).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(p).numel()]))
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut model.params_mut(), &grad_refs)?;
        }
        epoch_losses.push(total / batches as f64);
    }

    let bundle = ModelBundle::with_default_taps(model);
    let test_accuracy = if test.is_empty() { f64::NAN } else { evaluate_accuracy(&bundle, test)? };
    let test_predictions = predict_all(&bundle, &test.take(RECORDED_PREDICTIONS), 64)?;
    let report =
        TrainReport { test_accuracy, epochs: cfg.epochs, seed: cfg.seed, train_samples: train.len(), epoch_losses, test_predictions };
    Ok((bundle, report))
}
