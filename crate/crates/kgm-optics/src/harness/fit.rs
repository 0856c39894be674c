//! Least-squares slope fits in log–log coordinates.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Result of fitting `log v = intercept + slope · log λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Fitted exponent.
    pub slope: f64,
    /// Fitted `log c` in `v ≈ c λ^slope`.
    pub intercept: f64,
    /// Coefficient of determination (1 for an exact power law; also 1 when
    /// the values are all equal and the fit is exact).
    pub r2: f64,
}

/// Fit `value ≈ c·λ^slope` by least squares on `(log λ, log value)`.
///
/// Needs at least three points with distinct positive λ and positive values.
pub fn fit_slope(series: &[(f64, f64)]) -> Result<SlopeFit> {
    if series.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", series.len())));
    }
    if let Some(&(l, v)) = series.iter().find(|(l, v)| !(*l > 0.0 && *v > 0.0 && l.is_finite() && v.is_finite())) {
        return Err(Error::Fit(format!("non-positive or non-finite point (λ = {l}, value = {v})")));
    }
    let n = series.len() as f64;
    let xs: Vec<f64> = series.iter().map(|(l, _)| l.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all λ values coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SlopeFit { slope, intercept, r2 })
}
