use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Metrics};
use super::ridge::Ridge;
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::rng::{streams, substream};

pub const DEFAULT_FOLDS: usize = 10;

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at most 1.
pub fn k_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::invalid(format!("cannot split {n} samples into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, streams::FOLDS));
    let mut folds = vec![Vec::new(); k];
    for (i, v) in idx.into_iter().enumerate() {
        folds[i % k].push(v);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Indices not in `fold`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_name: String,
    /// Computed on the pooled out-of-fold predictions.
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// Per-fold metrics; `None` where a fold's targets are constant.
    pub per_fold: Vec<Option<Metrics>>,
    pub predictions: Vec<f64>,
}

impl MetricsReport {
    pub fn from_predictions(task_name: &str, y: &[f64], pred: Vec<f64>, folds: &[Vec<usize>]) -> Result<Self> {
        let pooled = metrics(y, &pred)?;
        let per_fold = folds
            .iter()
            .map(|f| {
                let yt: Vec<f64> = f.iter().map(|&i| y[i]).collect();
                let yp: Vec<f64> = f.iter().map(|&i| pred[i]).collect();
                metrics(&yt, &yp).ok()
            })
            .collect();
        Ok(Self {
            task_name: task_name.to_string(),
            mae: pooled.mae,
            rmse: pooled.rmse,
            r2: pooled.r2,
            per_fold,
            predictions: pred,
        })
    }
}

pub fn gather(x: &Mat, rows: &[usize]) -> Mat {
    x.select(ndarray::Axis(0), rows)
}

/// Ten-fold (by default) ridge cross-validation with pooled metrics.
pub fn ridge_cv(task_name: &str, x: &Mat, y: &[f64], lambda: f64, folds: &[Vec<usize>]) -> Result<MetricsReport> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::invalid(format!("{} embedding rows for {n} targets", x.nrows())));
    }
    let mut pred = vec![0.0; n];
    for fold in folds {
        let train = complement(n, fold);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = Ridge::fit(&gather(x, &train), &yt, lambda)?;
        for (&i, p) in fold.iter().zip(model.predict(&gather(x, fold))?) {
            pred[i] = p;
        }
    }
    MetricsReport::from_predictions(task_name, y, pred, folds)
}

pub fn ridge_ten_fold(task_name: &str, x: &Mat, y: &[f64], lambda: f64, seed: u64) -> Result<MetricsReport> {
    let folds = k_folds(y.len(), DEFAULT_FOLDS, seed)?;
    ridge_cv(task_name, x, y, lambda, &folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_evenly() {
        let folds = k_folds(63, 10, 5).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..63).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(folds, k_folds(63, 10, 5).unwrap());
        assert!(k_folds(9, 10, 0).is_err());
    }
}
