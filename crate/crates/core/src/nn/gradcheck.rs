//! Central finite-difference checks for analytic gradients.

use ndarray::ArrayView2;

use super::network::Network;
use crate::error::{Error, Result};

/// Floor applied to the denominator of the relative error. Central
/// differences at a 1e-5 step carry about 1e-11 of rounding noise, so
/// smaller components cannot be resolved to 1e-4.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(params: &[f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    grad
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

/// Compares backprop against finite differences on the probe objective
/// `0.5 * |net(input)|^2`, returning the worst relative error over all parameters.
pub fn gradient_check(net: &Network, input: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
    }
    let x = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Config(e.to_string()))?;
    let trace = net.forward_trace(x)?;
    let upstream = trace.output().clone();
    let analytic = net.backward(&trace, upstream.view())?;

    let mut probe = net.clone();
    let numeric = numeric_gradient(net.params(), eps, |p| {
        probe.set_params(p).expect("same length");
        let y = probe.forward(input).expect("validated input");
        0.5 * y.iter().map(|v| v * v).sum::<f64>()
    });
    Ok(max_relative_error(&analytic, &numeric))
}
