//! Central-difference verification of [`Network::backward`].

use super::network::{Mode, Network};
use super::optim::mse_loss;
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Per-parameter comparison of analytic and numerical gradients.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_parameter: usize,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR)
}

/// Largest relative error between backpropagated and central-difference
/// gradients of the training-mode MSE loss, over all parameters.
pub fn gradient_check(net: &Network, input: &Tensor, target: &Tensor, epsilon: f64) -> Result<f64> {
    gradient_report(net, input, target, epsilon).map(|r| r.max_relative_error)
}

pub fn gradient_report(net: &Network, input: &Tensor, target: &Tensor, epsilon: f64) -> Result<GradientReport> {
    let mut work = net.clone();
    let out = work.forward(input, Mode::Train)?;
    let (_, seed) = mse_loss(&out, target)?;
    let analytic = work.backward(&seed)?;

    let mut loss_at = |params: &[f64]| -> Result<f64> {
        work.set_params(params)?;
        let out = work.forward(input, Mode::Train)?;
        Ok(mse_loss(&out, target)?.0)
    };
    let mut params = net.params().to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + epsilon;
        let up = loss_at(&params)?;
        params[i] = orig - epsilon;
        let down = loss_at(&params)?;
        params[i] = orig;
        numeric.push((up - down) / (2.0 * epsilon));
    }
    let (worst_parameter, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradientReport {
        analytic,
        numeric,
        max_relative_error,
        worst_parameter,
    })
}
