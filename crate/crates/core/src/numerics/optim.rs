use rand::Rng;

use super::tensor::Tensor;
use crate::error::{PllError, Result};

/// Trainable tensor with its gradient and SGD momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum_buffer: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum_buffer = Tensor::zeros(value.shape());
        Parameter {
            value,
            grad,
            momentum_buffer,
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        Parameter::new(Tensor::new(shape.to_vec(), data).expect("shape matches length"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Heavy-ball SGD: `v <- momentum * v + grad; value <- value - lr * v`,
/// then gradients are cleared.
pub fn sgd_momentum_step(params: &mut [Parameter], lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(PllError::InvalidArgument(format!(
            "sgd: lr={lr}, momentum={momentum}"
        )));
    }
    if let Some(i) = params.iter().position(|p| !p.grad.is_finite()) {
        return Err(PllError::NonFinite(format!("gradient of parameter {i}")));
    }
    for p in params.iter_mut() {
        let Parameter {
            value,
            grad,
            momentum_buffer,
        } = p;
        for ((w, g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(momentum_buffer.data_mut())
        {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
        p.zero_grad();
    }
    Ok(())
}

/// Cosine annealing from `base_lr` at epoch 0 down to 0 at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
