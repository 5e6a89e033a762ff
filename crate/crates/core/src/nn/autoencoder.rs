use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::ConvLayer;
use super::ModelError;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// Distance of the mask from the endpoints of (0, 1).
pub const MASK_EPS: f64 = 1e-6;

/// Lightweight encoder-decoder producing a single-channel soft mask in (0, 1)
/// at the input's resolution:
///
/// `enc1: conv 1→8 + ReLU` → `enc2: conv 8→16 stride 2 + ReLU` →
/// `upsample x2` → `dec: conv 16→8 + ReLU` (+ `enc1` skip) → `head: conv 8→1` → squash.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAutoencoder<T: Scalar = f32> {
    enc1: ConvLayer<T>,
    enc2: ConvLayer<T>,
    dec: ConvLayer<T>,
    head: ConvLayer<T>,
}

#[derive(Debug, Clone)]
pub struct BoundAutoencoder {
    params: [(Var, Var); 4],
}

impl BoundAutoencoder {
    /// Rebinds from eight existing handles in [`BoundAutoencoder::params`] order.
    pub fn from_vars(vars: &[Var]) -> Option<Self> {
        let v: &[Var; 8] = vars.try_into().ok()?;
        Some(Self { params: [(v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7])] })
    }

    pub fn params(&self) -> Vec<Var> {
        self.params.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Soft mask `[N, 1, H, W]` for an input `[N, C, H, W]` with even H and W.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, ModelError> {
        let s = tape.shape(x);
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(TensorError::InvalidArgument {
                op: "mask_forward",
                msg: format!("expected [N, C, H, W] with even H and W, got {s:?}"),
            }
            .into());
        }
        let [(w1, b1), (w2, b2), (w3, b3), (w4, b4)] = self.params;
        let z1 = tape.conv2d(x, w1, b1, 1, 1)?;
        let a1 = tape.relu(z1);
        let z2 = tape.conv2d(a1, w2, b2, 2, 1)?;
        let a2 = tape.relu(z2);
        let up = tape.upsample_nearest(a2, 2)?;
        let z3 = tape.conv2d(up, w3, b3, 1, 1)?;
        let a3 = tape.relu(z3);
        let skip = tape.add(a3, a1)?;
        let logits = tape.conv2d(skip, w4, b4, 1, 1)?;
        Ok(tape.squash(logits, T::from_f64(MASK_EPS)))
    }
}

impl<T: Scalar> MaskAutoencoder<T> {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            enc1: ConvLayer::init(in_channels, 8, 3, &mut rng),
            enc2: ConvLayer::init(8, 16, 3, &mut rng),
            dec: ConvLayer::init(16, 8, 3, &mut rng),
            head: ConvLayer::init(8, 1, 3, &mut rng),
        }
    }

    /// Sets the output layer's bias, shifting every initial mask logit.
    pub fn with_output_bias(mut self, bias: f64) -> Self {
        self.head.bias = Tensor::full([1], T::from_f64(bias));
        self
    }

    /// Multiplies the output layer's weights by `gain`.
    pub fn with_output_weight_gain(mut self, gain: f64) -> Self {
        let g = T::from_f64(gain);
        self.head.weight = self.head.weight.map(|w| w * g);
        self
    }

    /// Sets the output layer's weights to zero, so the mask is the constant
    /// `squash(bias)` until training moves it.
    pub fn with_zero_output_weights(mut self) -> Self {
        self.head.weight = Tensor::zeros(self.head.weight.shape().to_vec());
        self
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundAutoencoder {
        let mut p = |c: &ConvLayer<T>| (tape.param(c.weight.clone()), tape.param(c.bias.clone()));
        BoundAutoencoder { params: [p(&self.enc1), p(&self.enc2), p(&self.dec), p(&self.head)] }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        [&self.enc1, &self.enc2, &self.dec, &self.head].into_iter().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(8);
        for c in [&mut self.enc1, &mut self.enc2, &mut self.dec, &mut self.head] {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> MaskAutoencoder<U> {
        MaskAutoencoder { enc1: self.enc1.cast(), enc2: self.enc2.cast(), dec: self.dec.cast(), head: self.head.cast() }
    }

    /// Soft mask for a plain input tensor.
    pub fn mask_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let m = bound.forward(&mut tape, xv)?;
        Ok(tape.value(m).clone())
    }
}
