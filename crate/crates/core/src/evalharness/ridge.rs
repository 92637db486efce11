use nalgebra::{DMatrix, DVector};
use ndarray::Axis;

use crate::autograd::Mat;
use crate::error::{Error, Result};

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Clone, Debug)]
pub struct Ridge {
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    /// Solves `(XᵀX + λI) w = Xᵀy` on the standardized, centred problem.
    /// With more features than samples the equivalent dual system
    /// `(XXᵀ + λI) c = y`, `w = Xᵀc` is solved instead.
    pub fn fit(x: &Mat, y: &[f64], lambda: f64) -> Result<Self> {
        let (n, k) = x.dim();
        if n != y.len() || n == 0 {
            return Err(Error::invalid(format!("{n} feature rows but {} targets", y.len())));
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("ridge penalty must be non-negative, got {lambda}")));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("ridge inputs contain non-finite values"));
        }
        let mean: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let scale: Vec<f64> = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, &mu)| {
                let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    0.0
                }
            })
            .collect();
        let xs = standardize(x, &mean, &scale);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let xm = DMatrix::from_row_iterator(n, k, xs.iter().copied());
        let weights = if k <= n {
            let mut a = xm.transpose() * &xm;
            for i in 0..k {
                a[(i, i)] += lambda;
            }
            let rhs = xm.transpose() * &yc;
            solve_spd(a, rhs, lambda)?
        } else {
            let mut a = &xm * xm.transpose();
            for i in 0..n {
                a[(i, i)] += lambda;
            }
            let c = solve_spd(a, yc, lambda)?;
            xm.transpose() * c
        };
        Ok(Self {
            mean,
            scale,
            weights: weights.iter().copied().collect(),
            intercept: y_mean,
        })
    }

    pub fn predict(&self, x: &Mat) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::invalid(format!(
                "model has {} features, input has {}",
                self.weights.len(),
                x.ncols()
            )));
        }
        let xs = standardize(x, &self.mean, &self.scale);
        Ok(xs
            .rows()
            .into_iter()
            .map(|r| self.intercept + r.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Features as the solver sees them (zero-variance columns become 0).
    pub fn standardized(&self, x: &Mat) -> Mat {
        standardize(x, &self.mean, &self.scale)
    }
}

fn standardize(x: &Mat, mean: &[f64], scale: &[f64]) -> Mat {
    let mut out = x.clone();
    for (mut c, (&mu, &s)) in out.axis_iter_mut(Axis(1)).zip(mean.iter().zip(scale)) {
        if s > 0.0 {
            c.mapv_inplace(|v| (v - mu) / s);
        } else {
            c.fill(0.0);
        }
    }
    out
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&b)),
        None if lambda > 0.0 => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Solver("ridge system is singular".into())),
        None => Err(Error::Solver(
            "normal equations are singular with λ = 0; use a positive ridge penalty".into(),
        )),
    }
}
