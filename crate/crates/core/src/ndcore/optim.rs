use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(param_sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = param_sizes.into_iter().collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update in place. `grads[i]` must match `params[i]` in size.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing from `base` at epoch 0 down to 0 at epoch `total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let g = vec![Tensor::scalar(0.3)];
        let mut adam = Adam::new([1]);
        adam.update(&mut p, &g, 0.01);
        // Bias correction makes the first step exactly lr·sign(g) up to eps.
        assert!((p[0].item() - 0.99).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new([1]);
        adam.update(&mut p, &[Tensor::scalar(5.0)], 0.0);
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 40), 1e-3);
        assert!(cosine_lr(1e-3, 40, 40).abs() < 1e-18);
        assert!((cosine_lr(1e-3, 20, 40) - 5e-4).abs() < 1e-15);
    }
}
