//! Least-squares line fits for slope diagnostics.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DegenerateFit(format!("{} abscissae for {} ordinates", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points (need at least 3)", x.len())));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit(format!("non-finite sample at position {i}")));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    Ok(LinearFit { slope, intercept: my - slope * mx, points: x.len() })
}

/// Fit of `ln y` against `ln x`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateFit(format!("log-log fit needs positive samples, got {v}")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}
