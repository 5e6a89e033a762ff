use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::weights::{take_named, NamedTensors, WeightError};
use super::ModelError;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// A square-kernel convolution with "same" padding for odd kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and bias.
    pub fn init(c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Tensor::from_fn([c_out, c_in, k, k], |_| T::from_f64(dist.sample(rng)));
        let bias = Tensor::from_fn([c_out], |_| T::from_f64(dist.sample(rng)));
        Self { weight, bias }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    /// The `[kH, kW]` kernel connecting input channel `src` to output channel `dst`.
    pub fn kernel_slice(&self, dst: usize, src: usize) -> &[T] {
        let k = self.kernel();
        let per = k * k;
        let start = (dst * self.in_channels() + src) * per;
        &self.weight.data()[start..start + per]
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer { weight: self.weight.cast(), bias: self.bias.cast() }
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> (Var, Var) {
        if trainable {
            (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        }
    }
}

/// Stack of `conv -> ReLU` blocks with 2x2 max pooling after every block but
/// the last, followed by a linear head on the flattened last block.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCnn<T: Scalar = f32> {
    convs: Vec<ConvLayer<T>>,
    fc_weight: Tensor<T>,
    fc_bias: Tensor<T>,
}

/// The classifier's parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundClassifier {
    convs: Vec<(Var, Var)>,
    fc: (Var, Var),
}

/// Tape handles for one classifier forward pass.
#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    /// Post-ReLU output of each conv block, before pooling.
    pub convs: Vec<Var>,
    /// Flattened input of the linear head.
    pub h: Var,
    pub logits: Var,
}

impl BoundClassifier {
    /// Rebinds from existing handles in [`BoundClassifier::params`] order:
    /// weight and bias of every conv block, then the linear head.
    pub fn from_vars(vars: &[Var]) -> Option<Self> {
        if vars.len() < 4 || !vars.len().is_multiple_of(2) {
            return None;
        }
        let (convs, fc) = vars.split_at(vars.len() - 2);
        Some(Self { convs: convs.chunks(2).map(|c| (c[0], c[1])).collect(), fc: (fc[0], fc[1]) })
    }

    pub fn params(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.convs.iter().flat_map(|&(w, b)| [w, b]).collect();
        out.extend([self.fc.0, self.fc.1]);
        out
    }

    pub fn forward<T: Scalar>(&self, model: &ClassifierCnn<T>, tape: &mut Tape<T>, x: Var) -> Result<ClassifierTrace, ModelError> {
        let mut cur = x;
        let mut convs = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        for (i, (&(w, b), layer)) in self.convs.iter().zip(&model.convs).enumerate() {
            let z = tape.conv2d(cur, w, b, 1, layer.padding())?;
            let a = tape.relu(z);
            convs.push(a);
            cur = if i < last { tape.maxpool2d(a, 2, 2)? } else { a };
        }
        let h = tape.flatten(cur)?;
        let logits = tape.linear(h, self.fc.0, self.fc.1)?;
        Ok(ClassifierTrace { convs, h, logits })
    }
}

impl<T: Scalar> ClassifierCnn<T> {
    /// The three-block MNIST classifier: 1→16→32→64 channels of 3x3
    /// convolutions, pooling after the first two, and a 64·7·7 → 10 head.
    pub fn mnist(seed: u64) -> Self {
        Self::random(&[1, 16, 32, 64], 3, 7 * 7, 10, seed)
    }

    /// Randomly initialised network with `channels.len() - 1` conv blocks;
    /// `spatial` is the number of positions of the last block's output.
    pub fn random(channels: &[usize], kernel: usize, spatial: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = channels.windows(2).map(|c| ConvLayer::init(c[0], c[1], kernel, &mut rng)).collect();
        let f_in = channels.last().unwrap() * spatial;
        let bound = 1.0 / (f_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let fc_weight = Tensor::from_fn([classes, f_in], |_| T::from_f64(dist.sample(&mut rng)));
        let fc_bias = Tensor::from_fn([classes], |_| T::from_f64(dist.sample(&mut rng)));
        Self { convs, fc_weight, fc_bias }
    }

    pub fn from_layers(convs: Vec<ConvLayer<T>>, fc_weight: Tensor<T>, fc_bias: Tensor<T>) -> Result<Self, ModelError> {
        if convs.is_empty() {
            return Err(ModelError::Architecture("at least one conv block is required".into()));
        }
        for (i, pair) in convs.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(ModelError::Architecture(format!(
                    "conv{} emits {} channels but conv{} expects {}",
                    i + 1,
                    pair[0].out_channels(),
                    i + 2,
                    pair[1].in_channels()
                )));
            }
        }
        for (i, c) in convs.iter().enumerate() {
            let s = c.weight.shape();
            if s[2] != s[3] || s[2] % 2 == 0 || c.bias.shape() != [s[0]] {
                return Err(ModelError::Architecture(format!("conv{} must have an odd square kernel and matching bias", i + 1)));
            }
        }
        if fc_weight.rank() != 2 || fc_bias.shape() != [fc_weight.shape()[0]] {
            return Err(ModelError::Architecture("fc weight must be [classes, features] with [classes] bias".into()));
        }
        if !fc_weight.shape()[1].is_multiple_of(convs.last().unwrap().out_channels()) {
            return Err(ModelError::Architecture("fc input size is not a multiple of the last conv's channels".into()));
        }
        Ok(Self { convs, fc_weight, fc_bias })
    }

    pub fn convs(&self) -> &[ConvLayer<T>] {
        &self.convs
    }

    pub fn fc_weight(&self) -> &Tensor<T> {
        &self.fc_weight
    }

    pub fn fc_bias(&self) -> &Tensor<T> {
        &self.fc_bias
    }

    pub fn num_classes(&self) -> usize {
        self.fc_weight.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_weight.shape()[1]
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierCnn<U> {
        ClassifierCnn {
            convs: self.convs.iter().map(ConvLayer::cast).collect(),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundClassifier {
        let convs = self.convs.iter().map(|c| c.bind(tape, trainable)).collect();
        let fc = if trainable {
            (tape.param(self.fc_weight.clone()), tape.param(self.fc_bias.clone()))
        } else {
            (tape.constant(self.fc_weight.clone()), tape.constant(self.fc_bias.clone()))
        };
        BoundClassifier { convs, fc }
    }

    /// Parameters in the same order as [`BoundClassifier::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.convs.iter().flat_map(|c| [&c.weight, &c.bias]).collect();
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), c.weight.cast()));
            out.push((format!("conv{}.bias", i + 1), c.bias.cast()));
        }
        out.push(("fc.weight".into(), self.fc_weight.cast()));
        out.push(("fc.bias".into(), self.fc_bias.cast()));
        out
    }

    pub fn from_named(mut tensors: NamedTensors) -> Result<Self, ModelError> {
        let mut convs = Vec::new();
        while tensors.iter().any(|(n, _)| *n == format!("conv{}.weight", convs.len() + 1)) {
            let i = convs.len() + 1;
            let weight = take_named(&mut tensors, &format!("conv{i}.weight"), 4)?.cast();
            let bias = take_named(&mut tensors, &format!("conv{i}.bias"), 1)?.cast();
            convs.push(ConvLayer { weight, bias });
        }
        let fc_weight = take_named(&mut tensors, "fc.weight", 2)?.cast();
        let fc_bias = take_named(&mut tensors, "fc.bias", 1)?.cast();
        if let Some((name, _)) = tensors.first() {
            return Err(WeightError::Unexpected(name.clone()).into());
        }
        Self::from_layers(convs, fc_weight, fc_bias)
    }
}
