use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

/// `(anchor, positive, negative)` cell ids.
pub type Triplet = (usize, usize, usize);

/// Mean absolute error between `a` and the Gram matrix `E Eᵀ`.
pub fn reconstruction_loss(g: &mut Graph, e: Var, a: Var) -> Var {
    let et = g.transpose(e);
    let gram = g.matmul(e, et);
    let diff = g.sub(a, gram);
    let abs = g.abs(diff);
    g.mean_all(abs)
}

/// Mean hinge `max(‖e_a − e_p‖ − ‖e_a − e_n‖ + margin, 0)`.
pub fn triplet_loss(g: &mut Graph, e: Var, triplets: &[Triplet], margin: f64) -> Var {
    let anchors: Vec<usize> = triplets.iter().map(|t| t.0).collect();
    let pos: Vec<usize> = triplets.iter().map(|t| t.1).collect();
    let neg: Vec<usize> = triplets.iter().map(|t| t.2).collect();
    let ea = g.gather_rows(e, &anchors);
    let ep = g.gather_rows(e, &pos);
    let en = g.gather_rows(e, &neg);
    let dpv = g.sub(ea, ep);
    let dp = g.row_norm(dpv);
    let dnv = g.sub(ea, en);
    let dn = g.row_norm(dnv);
    let gap = g.sub(dp, dn);
    let m = g.constant(Array2::from_elem((triplets.len(), 1), margin));
    let shifted = g.add(gap, m);
    let hinge = g.relu(shifted);
    g.mean_all(hinge)
}

/// Mean smooth-L1 between predicted counts `yhat` (`m×1`) and `y`.
pub fn count_loss(g: &mut Graph, yhat: Var, y: &[f64], beta: f64) -> Var {
    let target = g.constant(Array2::from_shape_vec((y.len(), 1), y.to_vec()).expect("count target shape"));
    let r = g.sub(yhat, target);
    let s = g.smooth_l1(r, beta);
    g.mean_all(s)
}

/// One triplet per cell: a uniform neighbour and a uniform non-neighbour.
pub fn sample_triplets<R: Rng>(adjacency: &[Vec<usize>], rng: &mut R) -> Result<Vec<Triplet>> {
    let m = adjacency.len();
    let mut out = Vec::with_capacity(m);
    for (i, nbrs) in adjacency.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::invalid(format!("cell {i} has no neighbour for the triplet loss")));
        }
        let non = m - 1 - nbrs.iter().filter(|&&j| j != i).count();
        if non == 0 {
            return Err(Error::invalid(format!("cell {i} has no non-neighbour for the triplet loss")));
        }
        let p = nbrs[rng.random_range(0..nbrs.len())];
        // Pick the k-th non-neighbour directly so the draw count is fixed.
        let mut k = rng.random_range(0..non);
        let mut n = usize::MAX;
        for j in 0..m {
            if j == i || nbrs.contains(&j) {
                continue;
            }
            if k == 0 {
                n = j;
                break;
            }
            k -= 1;
        }
        out.push((i, p, n));
    }
    Ok(out)
}
