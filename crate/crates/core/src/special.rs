//! Normal and chi-square distribution functions.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{DcmmError, Result};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Upper tail `1 − Φ(x)` without cancellation for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    standard_normal().sf(x)
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DcmmError::Validation(format!("quantile level {p} outside (0, 1)")));
    }
    Ok(standard_normal().inverse_cdf(p))
}

pub fn chisq_survival(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(DcmmError::Validation("chi-square needs df >= 1".into()));
    }
    if x.is_nan() {
        return Err(DcmmError::Validation("chi-square argument is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| DcmmError::Validation(e.to_string()))?;
    Ok(dist.sf(x).clamp(0.0, 1.0))
}
