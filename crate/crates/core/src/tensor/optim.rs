use super::{Result, Scalar, Tensor, TensorError};

/// Adam with bias-corrected moment estimates. Moment buffers are allocated
/// lazily from the first set of parameters passed to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(TensorError::InvalidArgument { op: "adam", msg: format!("learning rate must be > 0, got {lr}") });
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(TensorError::InvalidArgument { op: "adam", msg: "betas must lie in [0, 1)".into() });
        }
        Ok(Self {
            lr: T::from_f64(lr),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            eps: T::from_f64(eps),
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Adam with the customary `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn with_lr(lr: f64) -> Result<Self> {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn steps_taken(&self) -> usize {
        self.t as usize
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                dim: "parameter count".into(),
                expected: params.len(),
                found: grads.len(),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                dim: "parameter count vs moment state".into(),
                expected: self.first.len(),
                found: params.len(),
            });
        }
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.numel() != g.len() || self.first[i].len() != g.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    dim: format!("parameter {i} length"),
                    expected: p.numel(),
                    found: g.len(),
                });
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (one - self.beta1) * g;
                *v = self.beta2 * *v + (one - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
