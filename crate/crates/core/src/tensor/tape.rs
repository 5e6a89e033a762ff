use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::{log_softmax_in_place, softmax_in_place, Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Ln(Var),
    Relu(Var),
    Sigmoid(Var),
    Squash(Var, T),
    StraightThrough(Var, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    Linear { x: Var, weight: Var, bias: Var, dims: (usize, usize, usize) },
    MaxPool { x: Var, argmax: Vec<usize>, geom: PoolGeometry },
    Upsample { x: Var, factor: usize },
    Softmax(Var),
    LogSoftmax(Var),
    Pick { x: Var, cols: usize, index: Vec<usize> },
    TotalVariation(Var),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so every operation's inputs precede it and a single reverse sweep
/// visits each operation exactly once.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Rank { op, expected: a.len(), found: b.len() });
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(TensorError::ShapeMismatch { op, dim: format!("dim {i}"), expected: x, found: y });
        }
    }
    Ok(())
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: impl ExactSizeIterator<Item = T>) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
        None => *slot = Some(delta.collect()),
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert!(value.numel() > 0);
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf without gradient state.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient, if `v` requires grad and backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v).map(|g| Tensor::new(self.shape(v).to_vec(), g.to_vec()).expect("grad matches value shape"))
    }

    /// Smallest distance of any recorded non-smooth operation's input to its
    /// kink: ReLU and abs inputs to 0, max-pool winners to the runner-up in
    /// their window, straight-through inputs to the threshold, and adjacent
    /// total-variation differences to 0. `None` if the tape has no such op.
    /// Finite-difference checks reject points closer than their margin.
    pub fn kink_margin(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut note = |d: f64| best = Some(best.map_or(d, |b: f64| b.min(d)));
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    for v in self.value(*x).data() {
                        note(v.as_f64().abs());
                    }
                }
                Op::StraightThrough(x, t) => {
                    for v in self.value(*x).data() {
                        note((*v - *t).as_f64().abs());
                    }
                }
                Op::MaxPool { x, argmax, geom } => {
                    let xs = self.value(*x).data();
                    for (o, &win) in argmax.iter().enumerate() {
                        let plane = o / (geom.ho * geom.wo);
                        let (oi, oj) = ((o / geom.wo) % geom.ho, o % geom.wo);
                        let base = plane * geom.h * geom.w;
                        for ki in 0..geom.k {
                            for kj in 0..geom.k {
                                let idx = base + (oi * geom.stride + ki) * geom.w + oj * geom.stride + kj;
                                // Two exact zeros are dead ReLU outputs; the
                                // ReLU margin already covers them.
                                if idx != win && !(xs[win] == T::zero() && xs[idx] == T::zero()) {
                                    note((xs[win] - xs[idx]).as_f64().abs());
                                }
                            }
                        }
                    }
                }
                Op::TotalVariation(x) => {
                    let s = self.shape(*x);
                    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                    for plane in self.value(*x).data().chunks(h * w) {
                        for i in 0..h {
                            for j in 0..w {
                                let c = plane[i * w + j].as_f64();
                                if i + 1 < h {
                                    note((c - plane[(i + 1) * w + j].as_f64()).abs());
                                }
                                if j + 1 < w {
                                    note((c - plane[i * w + j + 1].as_f64()).abs());
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        best
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, rg, op)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `scale * x + offset`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, offset: T) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + offset)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    /// `max(0, x)`; the derivative at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `eps + (1 - 2 eps) * sigmoid(x)`: a sigmoid that stays strictly inside (0, 1)
    /// even where the plain sigmoid rounds to an endpoint.
    pub fn squash(&mut self, x: Var, eps: T) -> Var {
        let two = T::one() + T::one();
        self.unary(x, Op::Squash(x, eps), move |v| eps + (T::one() - two * eps) * sigmoid(v))
    }

    /// Forward: `1` where `x > threshold`, else `0`. Backward: identity.
    pub fn straight_through(&mut self, x: Var, threshold: T) -> Var {
        self.unary(x, Op::StraightThrough(x, threshold), |v| if v > threshold { T::one() } else { T::zero() })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::from_f64(v.numel() as f64));
        let rg = self.rg(x);
        self.push(value, rg, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, [n, rest])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(weight), self.shape(bias), stride, padding)?;
        let data = kernels::conv2d_raw(&geom, self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let value = Tensor::new(geom.output_shape(), data)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, rg, Op::Conv2d { input, weight, bias, geom }))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let dims = kernels::linear_check(self.shape(x), self.shape(weight), self.shape(bias))?;
        let (n, f_in, f_out) = dims;
        let data = kernels::linear_raw(n, f_in, f_out, self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let value = Tensor::new([n, f_out], data)?;
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, rg, Op::Linear { x, weight, bias, dims }))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let g = PoolGeometry::new(self.shape(x), k, stride)?;
        let (data, argmax) = kernels::maxpool_raw(&g, self.value(x).data());
        let s = self.shape(x);
        let value = Tensor::new([s[0], s[1], g.ho, g.wo], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::MaxPool { x, argmax, geom: g }))
    }

    /// Nearest-neighbour upsampling of the two trailing spatial axes.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Rank { op: "upsample_nearest", expected: 4, found: s.len() });
        }
        if factor < 1 {
            return Err(TensorError::InvalidArgument { op: "upsample_nearest", msg: "factor must be >= 1".into() });
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(s[0] * s[1] * ho * wo);
        for plane in src.chunks(h * w) {
            for i in 0..ho {
                for j in 0..wo {
                    data.push(plane[(i / factor) * w + j / factor]);
                }
            }
        }
        let value = Tensor::new([s[0], s[1], ho, wo], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Upsample { x, factor }))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let k = *value.shape().last().expect("rank >= 1");
        value.data_mut().chunks_mut(k).for_each(softmax_in_place);
        let rg = self.rg(x);
        self.push(value, rg, Op::Softmax(x))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let k = *value.shape().last().expect("rank >= 1");
        value.data_mut().chunks_mut(k).for_each(log_softmax_in_place);
        let rg = self.rg(x);
        self.push(value, rg, Op::LogSoftmax(x))
    }

    /// For a `[N, K]` input, the `[N]` vector of `x[n, index[n]]`.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "pick", expected: 2, found: s.len() });
        }
        let (n, k) = (s[0], s[1]);
        if index.len() != n {
            return Err(TensorError::ShapeMismatch { op: "pick", dim: "row count".into(), expected: n, found: index.len() });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= k) {
            return Err(TensorError::InvalidArgument { op: "pick", msg: format!("column {bad} out of range for {k} columns") });
        }
        let src = self.value(x).data();
        let data = index.iter().enumerate().map(|(r, &c)| src[r * k + c]).collect();
        let value = Tensor::new([n], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Pick { x, cols: k, index: index.to_vec() }))
    }

    /// Anisotropic total variation over the two trailing axes, divided by the
    /// element count.
    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(TensorError::Rank { op: "total_variation", expected: 2, found: s.len() });
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let v = self.value(x);
        let mut total = T::zero();
        for plane in v.data().chunks(h * w) {
            for i in 0..h {
                for j in 0..w {
                    let c = plane[i * w + j];
                    if i + 1 < h {
                        total = total + (c - plane[(i + 1) * w + j]).abs();
                    }
                    if j + 1 < w {
                        total = total + (c - plane[i * w + j + 1]).abs();
                    }
                }
            }
        }
        let value = Tensor::scalar(total / T::from_f64(v.numel() as f64));
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::TotalVariation(x)))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every node on the
    /// path that requires grad. Gradients add across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        accumulate(&mut self.grads[loss.0], std::iter::once(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn send(&mut self, to: Var, delta: impl ExactSizeIterator<Item = T>) {
        if self.rg(to) {
            accumulate(&mut self.grads[to.0], delta);
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| nodes[v.0].value.data();
        let mut deltas: Vec<(Var, Vec<T>)> = Vec::with_capacity(3);
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if nodes[a.0].requires_grad {
                    deltas.push((*a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if nodes[b.0].requires_grad {
                    deltas.push((*b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if nodes[a.0].requires_grad {
                    deltas.push((*a, g.iter().zip(vb).map(|(&g, &y)| g / y).collect()));
                }
                if nodes[b.0].requires_grad {
                    deltas.push((*b, g.iter().zip(va).zip(vb).map(|((&g, &x), &y)| -g * x / (y * y)).collect()));
                }
            }
            Op::Affine(x, scale) => deltas.push((*x, g.iter().map(|&v| v * *scale).collect())),
            Op::Square(x) => {
                let two = T::one() + T::one();
                deltas.push((*x, g.iter().zip(val(*x)).map(|(&g, &v)| g * two * v).collect()));
            }
            Op::Sqrt(x) => {
                let two = T::one() + T::one();
                deltas.push((*x, g.iter().zip(out.data()).map(|(&g, &y)| g / (two * y)).collect()));
            }
            Op::Abs(x) => deltas.push((*x, g.iter().zip(val(*x)).map(|(&g, &v)| g * sign(v)).collect())),
            Op::Ln(x) => deltas.push((*x, g.iter().zip(val(*x)).map(|(&g, &v)| g / v).collect())),
            Op::Relu(x) => deltas.push((*x, g.iter().zip(val(*x)).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect())),
            Op::Sigmoid(x) => deltas.push((*x, g.iter().zip(out.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect())),
            Op::Squash(x, eps) => {
                let two = T::one() + T::one();
                let span = T::one() - two * *eps;
                deltas.push((
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(&g, &v)| {
                            let s = sigmoid(v);
                            g * span * s * (T::one() - s)
                        })
                        .collect(),
                ))
            }
            Op::StraightThrough(x, _) => deltas.push((*x, g.to_vec())),
            Op::Sum(x) => deltas.push((*x, vec![g[0]; nodes[x.0].value.numel()])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel();
                deltas.push((*x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::Reshape(x) => deltas.push((*x, g.to_vec())),
            Op::Conv2d { input, weight, bias, geom } => {
                let want = (nodes[input.0].requires_grad, nodes[weight.0].requires_grad, nodes[bias.0].requires_grad);
                let grads = kernels::conv2d_backward(geom, val(*input), val(*weight), g, want);
                if let Some(d) = grads.input {
                    deltas.push((*input, d));
                }
                if let Some(d) = grads.weight {
                    deltas.push((*weight, d));
                }
                if let Some(d) = grads.bias {
                    deltas.push((*bias, d));
                }
            }
            Op::Linear { x, weight, bias, dims: (n, f_in, f_out) } => {
                let (n, f_in, f_out) = (*n, *f_in, *f_out);
                if nodes[x.0].requires_grad {
                    // dx = g (n x f_out) * W (f_out x f_in)
                    let mut dx = vec![T::zero(); n * f_in];
                    T::gemm(
                        n,
                        f_out,
                        f_in,
                        T::one(),
                        g,
                        (f_out as isize, 1),
                        val(*weight),
                        (f_in as isize, 1),
                        T::zero(),
                        &mut dx,
                        (f_in as isize, 1),
                    );
                    deltas.push((*x, dx));
                }
                if nodes[weight.0].requires_grad {
                    // dW = g^T (f_out x n) * x (n x f_in)
                    let mut dw = vec![T::zero(); f_out * f_in];
                    T::gemm(
                        f_out,
                        n,
                        f_in,
                        T::one(),
                        g,
                        (1, f_out as isize),
                        val(*x),
                        (f_in as isize, 1),
                        T::zero(),
                        &mut dw,
                        (f_in as isize, 1),
                    );
                    deltas.push((*weight, dw));
                }
                if nodes[bias.0].requires_grad {
                    let mut db = vec![T::zero(); f_out];
                    for row in g.chunks(f_out) {
                        for (a, &b) in db.iter_mut().zip(row) {
                            *a = *a + b;
                        }
                    }
                    deltas.push((*bias, db));
                }
            }
            Op::MaxPool { x, argmax, .. } => {
                let mut dx = vec![T::zero(); nodes[x.0].value.numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                deltas.push((*x, dx));
            }
            Op::Upsample { x, factor } => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = (h * factor, w * factor);
                let mut dx = vec![T::zero(); nodes[x.0].value.numel()];
                for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                    for i in 0..ho {
                        for j in 0..wo {
                            let d = &mut plane[(i / factor) * w + j / factor];
                            *d = *d + gp[i * wo + j];
                        }
                    }
                }
                deltas.push((*x, dx));
            }
            Op::Softmax(x) => {
                let k = *out.shape().last().unwrap();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(k).zip(out.data().chunks(k)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| y * (gv - dot)));
                }
                deltas.push((*x, dx));
            }
            Op::LogSoftmax(x) => {
                let k = *out.shape().last().unwrap();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(k).zip(out.data().chunks(k)) {
                    let total: T = gr.iter().copied().sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| gv - y.exp() * total));
                }
                deltas.push((*x, dx));
            }
            Op::Pick { x, cols, index } => {
                let mut dx = vec![T::zero(); nodes[x.0].value.numel()];
                for (r, (&c, &gv)) in index.iter().zip(g).enumerate() {
                    dx[r * cols + c] = gv;
                }
                deltas.push((*x, dx));
            }
            Op::TotalVariation(x) => {
                let v = &nodes[x.0].value;
                let s = v.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let scale = g[0] / T::from_f64(v.numel() as f64);
                let mut dx = vec![T::zero(); v.numel()];
                for (plane, dp) in v.data().chunks(h * w).zip(dx.chunks_mut(h * w)) {
                    for i in 0..h {
                        for j in 0..w {
                            let a = i * w + j;
                            if i + 1 < h {
                                let b = a + w;
                                let d = sign(plane[a] - plane[b]) * scale;
                                dp[a] = dp[a] + d;
                                dp[b] = dp[b] - d;
                            }
                            if j + 1 < w {
                                let b = a + 1;
                                let d = sign(plane[a] - plane[b]) * scale;
                                dp[a] = dp[a] + d;
                                dp[b] = dp[b] - d;
                            }
                        }
                    }
                }
                deltas.push((*x, dx));
            }
        }
        for (to, d) in deltas {
            self.send(to, d.into_iter());
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
