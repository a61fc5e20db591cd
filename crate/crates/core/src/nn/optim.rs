use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over every element, and its gradient `2 (out - target) / n`.
pub fn mse_loss(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "output {:?} vs target {:?}",
            output.shape(),
            target.shape()
        )));
    }
    let n = output.len() as f64;
    let mut loss = 0.0;
    let grad = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_parts(output.shape().to_vec(), grad)))
}

/// Adam with bias correction and an inverse-time learning-rate decay,
/// `lr_t = lr / (1 + decay * t)` where `t` counts completed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64, decay: f64) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.learning_rate / (1.0 + self.decay * self.step as f64)
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_learning_rate();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor {
        Tensor::new(vec![1, data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&t(&[1.0, 2.0]), &t(&[1.0, 2.0])).unwrap().0, 0.0);
        let (l, g) = mse_loss(&t(&[1.0, 1.0]), &t(&[0.0, 0.0])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[1.0, 1.0]);
        let (l, _) = mse_loss(&t(&[3.11]), &t(&[3.00])).unwrap();
        assert!((l - 0.0121).abs() < 1e-12);
        assert!(mse_loss(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut s = AdamState::new(1, 1e-3, 0.0);
        let mut p = [0.0];
        adam_step(&mut s, &mut p, &[0.5]).unwrap();
        // lr * g / (|g| + eps)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 0.000_999_999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, 1e-2, 0.1);
        let mut p = [1.0, -2.0, 0.5];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn deterministic_and_decaying() {
        let run = || {
            let mut s = AdamState::new(2, 1e-2, 0.5);
            let mut p = [0.3, -0.7];
            for i in 0..10 {
                adam_step(&mut s, &mut p, &[0.1 * i as f64, -0.05]).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!((sa.current_learning_rate() - 1e-2 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let mut s = AdamState::new(2, 1e-3, 0.0);
        assert!(adam_step(&mut s, &mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(adam_step(&mut s, &mut [0.0; 2], &[0.0; 1]).is_err());
    }
}
