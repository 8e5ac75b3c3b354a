use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central finite-difference gradient of a scalar function.
///
/// Each coordinate is perturbed by `±eps`; the divisor is the difference of
/// the perturbed coordinates as actually stored in `f32`, which removes the
/// rounding of `x ± eps` from the estimate.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, eps: f32) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::config("finite-difference eps must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let hi = orig + eps;
        let lo = orig - eps;
        probe.data_mut()[i] = hi;
        let f_hi = f(&probe)?;
        probe.data_mut()[i] = lo;
        let f_lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !f_hi.is_finite() || !f_lo.is_finite() {
            return Err(Error::NonFinite(format!(
                "function is not finite near coordinate {i}"
            )));
        }
        grad.data_mut()[i] = ((f_hi - f_lo) / (hi as f64 - lo as f64)) as f32;
    }
    Ok(grad)
}

/// Central difference of a scalar `f64` function, for scalar oracles.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that degrades to an
/// absolute comparison for near-zero gradients.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
