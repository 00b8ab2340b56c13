use super::TrainError;
use crate::tensor::{Scalar, Tensor};

/// Adam without weight decay. Moment buffers are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(1e-4, 0.9, 0.999, 1e-8).expect("defaults are valid")
    }
}

impl<T: Scalar> AdamState<T> {
    /// `lr` may be zero, which turns every step into a no-op.
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self, TrainError> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(TrainError::Config(format!("lr must be >= 0, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(epsilon > 0.0) {
            return Err(TrainError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            lr: T::from_f64_lossy(lr),
            beta1: T::from_f64_lossy(beta1),
            beta2: T::from_f64_lossy(beta2),
            epsilon: T::from_f64_lossy(epsilon),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// One update of every parameter. Nothing is modified when a gradient is
    /// non-finite or mis-sized.
    pub fn step(
        &mut self,
        names: &[String],
        params: &mut [&mut Tensor<T>],
        grads: &[&[T]],
    ) -> Result<(), TrainError> {
        if params.len() != grads.len() || names.len() != grads.len() {
            return Err(TrainError::Config(format!(
                "{} parameters, {} gradients, {} names",
                params.len(),
                grads.len(),
                names.len()
            )));
        }
        for ((name, p), g) in names.iter().zip(params.iter()).zip(grads) {
            if p.numel() != g.len() {
                return Err(TrainError::Config(format!(
                    "{name}: {} values but gradient of {}",
                    p.numel(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { name: name.clone() });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(TrainError::Config("parameter shapes changed between steps".into()));
        }
        self.t += 1;
        let one = T::one();
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi = *pi - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
