//! Closed-form log likelihood ratio of the linear-Gaussian example.

use crate::error::{Error, Result};

/// `Gamma(y) = ln dF/dF^i (y)` for `F = N(0, R)` and
/// `F^i = N(pred_mean, pred_var + R)`:
///
/// `1/2 ln((pred_var + R)/R) - y^2/(2R) + (y - pred_mean)^2 / (2(pred_var + R))`.
pub fn gamma_gaussian(pred_mean: f64, pred_var: f64, r: f64, y: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::NonpositiveR(r));
    }
    let s = pred_var + r;
    let d = y - pred_mean;
    Ok(0.5 * (s / r).ln() - y * y / (2.0 * r) + d * d / (2.0 * s))
}
