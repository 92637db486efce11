use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MAE, RMSE and `R² = 1 − SS_res / SS_tot`.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    let n = y_true.len();
    if n != y_pred.len() {
        return Err(Error::invalid(format!("{n} targets but {} predictions", y_pred.len())));
    }
    if n < 2 {
        return Err(Error::invalid("metrics need at least two samples"));
    }
    let mean = y_true.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² is undefined for constant targets"));
    }
    let (mut abs, mut sq) = (0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        abs += (t - p).abs();
        sq += (t - p).powi(2);
    }
    Ok(Metrics {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        r2: 1.0 - sq / ss_tot,
    })
}
