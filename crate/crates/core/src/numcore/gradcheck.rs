use crate::error::{Error, Result};

use super::Tensor;

/// Compares an analytic gradient against central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)` where
/// `numeric_i = (f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn grad_check<F>(f: F, point: &Tensor, analytic: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> f64,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!(
            "grad_check eps {eps} not in (0, 1e-2]"
        )));
    }
    if analytic.shape() != point.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} vs point {:?}",
            analytic.shape(),
            point.shape()
        )));
    }
    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = f(&probe);
        probe.data_mut()[i] = x0 - eps;
        let down = f(&probe);
        probe.data_mut()[i] = x0;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
