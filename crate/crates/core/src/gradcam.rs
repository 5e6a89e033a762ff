//! Grad-CAM saliency and the threshold-sweep minimality metric used to
//! compare it against optimized masks.

use thiserror::Error;

use crate::explain::{active_fraction, apply_mask, black_background};
use crate::nn::{ModelBundle, ModelError};
use crate::tensor::{Scalar, Tape, Tensor, TensorError};

/// Number of thresholds swept by [`minimality_at_fidelity`].
pub const THRESHOLDS: usize = 100;

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("layer {0:?} is not a tapped conv layer")]
    UnknownLayer(String),
    #[error("class index {y} out of range for {classes} classes")]
    BadClass { y: usize, classes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GradCamError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `[H, W]` map in `[0, 1]` at input resolution.
    pub heatmap: Tensor<f64>,
    pub layer: String,
}

/// The last conv layer among the bundle's taps.
pub fn default_layer<T: Scalar>(bundle: &ModelBundle<T>) -> Option<String> {
    bundle.taps().iter().rev().find(|t| t.conv_index().is_some()).map(|t| t.layer.clone())
}

pub fn gradcam<T: Scalar>(bundle: &ModelBundle<T>, x: &Tensor<T>, y: usize, layer: &str) -> Result<SaliencyMap> {
    let index = bundle
        .taps()
        .iter()
        .find(|t| t.layer == layer)
        .and_then(|t| t.conv_index())
        .ok_or_else(|| GradCamError::UnknownLayer(layer.to_string()))?;
    let classes = bundle.num_classes();
    if y >= classes {
        return Err(GradCamError::BadClass { y, classes });
    }
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let xv = tape.param(x.clone());
    let out = bundle.trace(&mut tape, &bound, xv)?;
    let logit = tape.pick(out.logits, &[y])?;
    tape.backward(logit)?;

    let a_var = out.trace.convs[index];
    let a = tape.value(a_var);
    let &[_, c, h, w] = a.shape() else { unreachable!("conv taps are rank 4") };
    let grad = tape.grad(a_var).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); a.numel()]);
    let mut cam = vec![0.0f64; h * w];
    for ch in 0..c {
        let g = &grad[ch * h * w..(ch + 1) * h * w];
        let alpha = g.iter().map(|v| v.as_f64()).sum::<f64>() / (h * w) as f64;
        for (dst, av) in cam.iter_mut().zip(&a.data()[ch * h * w..(ch + 1) * h * w]) {
            *dst += alpha * av.as_f64();
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let (out_h, out_w) = (x.shape()[2], x.shape()[3]);
    let mut up = bilinear_upsample(&cam, h, w, out_h, out_w);
    let max = up.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut up {
            *v /= max;
        }
    }
    Ok(SaliencyMap { heatmap: Tensor::new(vec![out_h, out_w], up)?, layer: layer.to_string() })
}

/// Half-pixel-centred bilinear resampling with edge clamping.
pub fn bilinear_upsample(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Binary mask `heatmap >= t` shaped like `x`.
pub fn threshold_mask<T: Scalar>(map: &SaliencyMap, t: f64, x_shape: &[usize]) -> Tensor<T> {
    let data = map.heatmap.data().iter().map(|&v| if v >= t { T::one() } else { T::zero() }).collect();
    Tensor::new(x_shape.to_vec(), data).expect("heatmap matches input resolution")
}

/// Active fraction of each swept mask, threshold `(i + 1) / 100` for `i` in `0..100`.
pub fn sweep_fractions(map: &SaliencyMap) -> Vec<f64> {
    (0..THRESHOLDS)
        .map(|i| {
            let t = (i + 1) as f64 / THRESHOLDS as f64;
            map.heatmap.data().iter().filter(|&&v| v >= t).count() as f64 / map.heatmap.numel() as f64
        })
        .collect()
}

/// Smallest active fraction among the swept masks whose masked image keeps
/// `argmax = y`, or 1.0 when none does. Masked-out pixels are black, as for
/// optimized explanations.
pub fn minimality_at_fidelity<T: Scalar>(bundle: &ModelBundle<T>, x: &Tensor<T>, map: &SaliencyMap, y: usize) -> Result<f64> {
    let black = black_background::<T>(x.shape());
    let mut best = 1.0f64;
    for i in 0..THRESHOLDS {
        let t = (i + 1) as f64 / THRESHOLDS as f64;
        let mask = threshold_mask::<T>(map, t, x.shape());
        let fraction = active_fraction(&mask).1;
        if fraction >= best {
            continue;
        }
        let (pred, _) = bundle.predict(&apply_mask(&mask, x, &black))?;
        if pred == y {
            best = fraction;
        }
    }
    Ok(best)
}
