//! Log-log convergence-rate fitting by ordinary least squares.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FitError {
    #[error("rate fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("rate fitting needs positive coordinates, got ({n}, {value})")]
    NonPositivePoint { n: f64, value: f64 },
    #[error("rate fitting needs at least two distinct n values")]
    DegenerateAbscissa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Least squares of log(value) on log(n). The slope estimates the power-law
/// exponent; its standard error comes from the usual normal-theory formula
/// sqrt(SSR / (k - 2) / Sxx).
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    for &(n, value) in points {
        if !(n > 0.0 && n.is_finite() && value > 0.0 && value.is_finite()) {
            return Err(FitError::NonPositivePoint { n, value });
        }
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.ln()).collect();
    let k = points.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(FitError::DegenerateAbscissa);
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let slope_se = (ssr.max(0.0) / (k - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
    })
}
