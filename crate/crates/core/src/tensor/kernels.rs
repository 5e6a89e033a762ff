//! Raw numeric kernels shared by the tape and by plain (non-differentiable)
//! inference code.

use rayon::prelude::*;

use super::{Result, Scalar, Tensor, TensorError};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        if input.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, found: input.len() });
        }
        if weight.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, found: weight.len() });
        }
        if stride < 1 {
            return Err(TensorError::InvalidArgument { op: OP, msg: "stride must be >= 1".into() });
        }
        let (n, c_in, h, w) = (input[0], input[1], input[2], input[3]);
        let (c_out, wc_in, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wc_in != c_in {
            return Err(TensorError::ShapeMismatch { op: OP, dim: "input channels (weight dim 1)".into(), expected: c_in, found: wc_in });
        }
        if bias != [c_out] {
            return Err(TensorError::ShapeMismatch { op: OP, dim: "bias length".into(), expected: c_out, found: bias.iter().product() });
        }
        let ho = conv_output_dim(h, kh, stride, padding).ok_or_else(|| TensorError::ShapeMismatch {
            op: OP,
            dim: "kernel height vs padded input height".into(),
            expected: h + 2 * padding,
            found: kh,
        })?;
        let wo = conv_output_dim(w, kw, stride, padding).ok_or_else(|| TensorError::ShapeMismatch {
            op: OP,
            dim: "kernel width vs padded input width".into(),
            expected: w + 2 * padding,
            found: kw,
        })?;
        Ok(Self { n, c_in, h, w, c_out, kh, kw, stride, padding, ho, wo })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.ho, self.wo]
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &input[(c * g.h + ii as usize) * g.w..][..g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        *v = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], out: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut out[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            dst[jj as usize] = dst[jj as usize] + src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_raw<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let in_per = g.c_in * g.h * g.w;
    let out_per = g.c_out * g.positions();
    let mut out = vec![T::zero(); g.n * out_per];
    let run = |(x, y): (&[T], &mut [T])| {
        let mut cols = vec![T::zero(); g.patch() * g.positions()];
        im2col(g, x, &mut cols);
        for (co, row) in y.chunks_mut(g.positions()).enumerate() {
            row.fill(bias[co]);
        }
        let p = g.positions() as isize;
        T::gemm(g.c_out, g.patch(), g.positions(), T::one(), weight, (g.patch() as isize, 1), &cols, (p, 1), T::one(), y, (p, 1));
    };
    if g.n > 1 {
        input.par_chunks(in_per).zip(out.par_chunks_mut(out_per)).for_each(run);
    } else {
        input.chunks(in_per).zip(out.chunks_mut(out_per)).for_each(run);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (want_input, want_weight, want_bias) = want;
    let in_per = g.c_in * g.h * g.w;
    let p = g.positions();
    let out_per = g.c_out * p;
    let wlen = g.c_out * g.patch();

    let per_sample = |(x, dy): (&[T], &[T])| -> (Vec<T>, Vec<T>) {
        let mut dx = Vec::new();
        let mut dw = Vec::new();
        if want_weight {
            let mut cols = vec![T::zero(); g.patch() * p];
            im2col(g, x, &mut cols);
            dw = vec![T::zero(); wlen];
            // dW = dY (c_out x P) * cols^T (P x patch)
            T::gemm(
                g.c_out,
                p,
                g.patch(),
                T::one(),
                dy,
                (p as isize, 1),
                &cols,
                (1, p as isize),
                T::zero(),
                &mut dw,
                (g.patch() as isize, 1),
            );
        }
        if want_input {
            let mut dcols = vec![T::zero(); g.patch() * p];
            // dcols = W^T (patch x c_out) * dY (c_out x P)
            T::gemm(
                g.patch(),
                g.c_out,
                p,
                T::one(),
                weight,
                (1, g.patch() as isize),
                dy,
                (p as isize, 1),
                T::zero(),
                &mut dcols,
                (p as isize, 1),
            );
            dx = vec![T::zero(); in_per];
            col2im(g, &dcols, &mut dx);
        }
        (dx, dw)
    };

    let parts: Vec<(Vec<T>, Vec<T>)> = if g.n > 1 {
        input.par_chunks(in_per).zip(grad_out.par_chunks(out_per)).map(per_sample).collect()
    } else {
        input.chunks(in_per).zip(grad_out.chunks(out_per)).map(per_sample).collect()
    };

    let mut grads = ConvGrads { input: None, weight: None, bias: None };
    if want_weight {
        let mut dw = vec![T::zero(); wlen];
        for (_, part) in &parts {
            for (a, &b) in dw.iter_mut().zip(part) {
                *a = *a + b;
            }
        }
        grads.weight = Some(dw);
    }
    if want_input {
        let mut dx = Vec::with_capacity(g.n * in_per);
        for (part, _) in parts {
            dx.extend(part);
        }
        grads.input = Some(dx);
    }
    if want_bias {
        let mut db = vec![T::zero(); g.c_out];
        for dy in grad_out.chunks(out_per) {
            for (co, row) in dy.chunks(p).enumerate() {
                db[co] = db[co] + row.iter().copied().sum::<T>();
            }
        }
        grads.bias = Some(db);
    }
    grads
}

/// Cross-correlation (no kernel flip) of an NCHW batch.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    Tensor::new(g.output_shape(), conv2d_raw(&g, input.data(), weight.data(), bias.data()))
}

pub(crate) fn linear_check(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    if x.len() != 2 {
        return Err(TensorError::Rank { op: OP, expected: 2, found: x.len() });
    }
    if w.len() != 2 {
        return Err(TensorError::Rank { op: OP, expected: 2, found: w.len() });
    }
    if w[1] != x[1] {
        return Err(TensorError::ShapeMismatch { op: OP, dim: "input features (weight dim 1)".into(), expected: x[1], found: w[1] });
    }
    if b != [w[0]] {
        return Err(TensorError::ShapeMismatch { op: OP, dim: "bias length".into(), expected: w[0], found: b.iter().product() });
    }
    Ok((x[0], x[1], w[0]))
}

pub(crate) fn linear_raw<T: Scalar>(n: usize, f_in: usize, f_out: usize, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(n * f_out);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    // out += x (n x f_in) * w^T (f_in x f_out)
    T::gemm(n, f_in, f_out, T::one(), x, (f_in as isize, 1), w, (1, f_in as isize), T::one(), &mut out, (f_out as isize, 1));
    out
}

/// `x · weightᵀ + bias` for `x: [N, F_in]`, `weight: [F_out, F_in]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f_in, f_out) = linear_check(x.shape(), weight.shape(), bias.shape())?;
    Tensor::new([n, f_out], linear_raw(n, f_in, f_out, x.data(), weight.data(), bias.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl PoolGeometry {
    pub fn new(shape: &[usize], k: usize, stride: usize) -> Result<Self> {
        const OP: &str = "maxpool2d";
        if k < 1 || stride < 1 {
            return Err(TensorError::InvalidArgument { op: OP, msg: format!("window {k} and stride {stride} must be >= 1") });
        }
        if shape.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, found: shape.len() });
        }
        let (h, w) = (shape[2], shape[3]);
        let ho = conv_output_dim(h, k, stride, 0).ok_or_else(|| TensorError::ShapeMismatch {
            op: OP,
            dim: "window vs height".into(),
            expected: h,
            found: k,
        })?;
        let wo = conv_output_dim(w, k, stride, 0).ok_or_else(|| TensorError::ShapeMismatch {
            op: OP,
            dim: "window vs width".into(),
            expected: w,
            found: k,
        })?;
        Ok(Self { planes: shape[0] * shape[1], h, w, k, stride, ho, wo })
    }
}

/// Window maxima plus, for every output element, the flat index of the input
/// element that produced it (first occurrence in row-major order on ties).
pub(crate) fn maxpool_raw<T: Scalar>(g: &PoolGeometry, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..g.planes {
        let base = plane * g.h * g.w;
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let mut best_idx = base + oi * g.stride * g.w + oj * g.stride;
                let mut best = x[best_idx];
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let idx = base + (oi * g.stride + ki) * g.w + oj * g.stride + kj;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let g = PoolGeometry::new(x.shape(), k, stride)?;
    let (out, _) = maxpool_raw(&g, x.data());
    Tensor::new([x.shape()[0], x.shape()[1], g.ho, g.wo], out)
}
