//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Per input: `|analytic - numeric| / max(|analytic|, |numeric|, SCALE_FLOOR)`
    /// measured in the Euclidean norm over all entries.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Denominator floor, so that an identically zero gradient (such as the
/// attention key bias, which softmax cancels) compares round-off to
/// round-off as an absolute error instead of a ratio near 1.
pub const SCALE_FLOOR: f64 = 1e-7;

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks `d loss / d input` for every tensor in `inputs`.
///
/// `loss` is evaluated once with gradients to get the analytic value, then
/// twice per input entry at `x ± h`. Inputs must be parameters (leaves that
/// require a gradient); their values are restored afterwards.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    loss: impl Fn() -> Result<Tensor<f64>>,
) -> Result<GradCheck> {
    for t in inputs {
        t.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (t, an) in inputs.iter().zip(&analytic) {
        let mut numeric = vec![0.0; t.numel()];
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.update_data(|d| d[i] = orig + h);
            let plus = crate::no_grad(&loss)?.item();
            t.update_data(|d| d[i] = orig - h);
            let minus = crate::no_grad(&loss)?.item();
            t.update_data(|d| d[i] = orig);
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        let diff = norm(an.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(an.iter().copied()).max(norm(numeric.iter().copied()));
        relative_errors.push(diff / scale.max(SCALE_FLOOR));
        t.zero_grad();
    }
    Ok(GradCheck { relative_errors })
}
