//! Feature-similarity graphs over grid cells.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::autograd::Mat;
use crate::error::{Error, Result};

/// Pairwise cosine similarity of the rows of `features`.
///
/// All-zero rows are similar to nothing, including themselves.
pub fn cosine_adjacency(features: &Mat) -> Result<Mat> {
    let m = features.nrows();
    if m == 0 {
        return Err(Error::invalid("cosine_adjacency needs at least one row"));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("features contain non-finite values"));
    }
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut unit = features.clone();
    for (mut row, &n) in unit.rows_mut().into_iter().zip(&norms) {
        if n > 0.0 {
            row.mapv_inplace(|x| x / n);
        }
    }
    let mut a = unit.dot(&unit.t());
    for i in 0..m {
        for j in 0..i {
            let v = (0.5 * (a[[i, j]] + a[[j, i]])).clamp(-1.0, 1.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
        a[[i, i]] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
    }
    Ok(a)
}

/// Binary incidence rows: entry `(i, j)` is 1 when `j` is a neighbour of `i`.
pub fn neighbor_feature_vectorize(neighbors: &Array2<i64>) -> Result<Mat> {
    let m = neighbors.nrows();
    let mut out = Mat::zeros((m, m));
    for (i, row) in neighbors.axis_iter(Axis(0)).enumerate() {
        for &id in row {
            if id == -1 {
                continue;
            }
            if id < 0 || id as usize >= m {
                return Err(Error::invalid(format!("cell {i}: neighbour id {id} out of range")));
            }
            out[[i, id as usize]] = 1.0;
        }
    }
    Ok(out)
}

/// Keep the `k` largest off-diagonal entries per row (and the diagonal),
/// then symmetrize by taking the elementwise maximum magnitude.
pub fn top_k_sparsify(a: &Mat, k: usize) -> Mat {
    let m = a.nrows();
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut idx: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            idx.sort_by(|&x, &y| a[[i, y]].total_cmp(&a[[i, x]]).then(x.cmp(&y)));
            idx.truncate(k);
            idx.into_iter().map(|j| (j, a[[i, j]])).collect()
        })
        .collect();
    let mut out = Mat::zeros((m, m));
    for (i, kept) in rows.iter().enumerate() {
        out[[i, i]] = a[[i, i]];
        for &(j, v) in kept {
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_hex_grid, Rect};
    use crate::ingest::neighbor_vector;
    use ndarray::array;

    #[test]
    fn identical_orthogonal_and_zero_rows() {
        let x = array![[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 3.0], [0.0, 0.0, 0.0]];
        let a = cosine_adjacency(&x).unwrap();
        assert!((a[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(a[[0, 2]], 0.0);
        assert_eq!(a.row(3).sum(), 0.0);
        assert_eq!(a[[2, 2]], 1.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(cosine_adjacency(&array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn adjacent_interior_cells_share_two_of_six() {
        let g = build_hex_grid(Rect::new(0.0, 0.0, 1500.0, 1500.0), 100.0).unwrap();
        let nv = neighbor_vector(&g);
        let inc = neighbor_feature_vectorize(&nv).unwrap();
        let a = cosine_adjacency(&inc).unwrap();
        let i = (0..g.len())
            .find(|&i| g.adjacency[i].len() == 6 && g.adjacency[i].iter().all(|&j| g.adjacency[j].len() == 6))
            .unwrap();
        assert_eq!(inc.row(i).sum(), 6.0);
        let j = g.adjacency[i][0];
        assert!((a[[i, j]] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_neighbor_rejected() {
        let nv = array![[1i64, -1], [5, -1]];
        assert!(neighbor_feature_vectorize(&nv).is_err());
    }

    #[test]
    fn top_k_keeps_strongest() {
        let a = array![[1.0, 0.9, 0.1], [0.9, 1.0, 0.5], [0.1, 0.5, 1.0]];
        let s = top_k_sparsify(&a, 1);
        assert_eq!(s[[0, 2]], 0.0);
        assert_eq!(s[[1, 2]], 0.5);
        assert_eq!(s[[0, 1]], 0.9);
    }
}
