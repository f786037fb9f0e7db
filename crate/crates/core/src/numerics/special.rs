use statrs::function::gamma;

use crate::error::{Error, Result};

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if a.is_nan() || a <= 0.0 || a.is_infinite() {
        return Err(Error::Domain(format!("gamma_q shape {a}")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("gamma_q argument {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma::gamma_ur(a, x).clamp(0.0, 1.0))
}

/// Upper tail `P(χ²_df ≥ statistic)`.
pub fn chi_square_sf(statistic: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(Error::Domain("chi-square with zero degrees of freedom".into()));
    }
    if statistic.is_nan() || statistic < 0.0 {
        return Err(Error::Domain(format!("chi-square statistic {statistic}")));
    }
    gamma_q(df as f64 / 2.0, statistic / 2.0)
}
