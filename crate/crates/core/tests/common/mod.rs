//! Small fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use flexireg_core::autograd::Mat;
use flexireg_core::graphs::cosine_adjacency;
use flexireg_core::gridlearner::{CellInputs, GridLearnerConfig};
use flexireg_core::prompt::{PromptConfig, PromptInputs};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// `m` cells on a ring; every cell has two neighbours and, for `m ≥ 4`,
/// at least one non-neighbour.
pub fn ring_cells(m: usize, sat_dim: usize, seed: u64) -> CellInputs {
    let mut r = rng(seed);
    let poi = Array2::from_shape_fn((m, 15), |_| r.random_range(0..4) as f64);
    let landuse = Array2::from_shape_fn((m, 20), |_| r.random_range(0..3) as f64);
    let satellite = gaussian(m, sat_dim, &mut r);
    let adjacency: Vec<Vec<usize>> = (0..m).map(|i| vec![(i + m - 1) % m, (i + 1) % m]).collect();
    let mut inc = Array2::zeros((m, m));
    for (i, nb) in adjacency.iter().enumerate() {
        for &j in nb {
            inc[[i, j]] = 1.0;
        }
    }
    CellInputs {
        graph_poi: cosine_adjacency(&poi).unwrap(),
        graph_landuse: cosine_adjacency(&landuse).unwrap(),
        graph_neighbor: cosine_adjacency(&inc).unwrap(),
        poi,
        landuse,
        satellite,
        adjacency,
    }
}

pub fn tiny_learner(d: usize, heads: usize) -> GridLearnerConfig {
    GridLearnerConfig {
        d,
        heads,
        gat_layers: 1,
        fusion_layers: 1,
        dropout: 0.0,
        epochs: 20,
        lr: 1e-2,
        ..Default::default()
    }
}

/// Region inputs with `x` images per region.
pub fn tiny_prompt_inputs(n: usize, d: usize, d_llm: usize, d_img: usize, x: usize, seed: u64) -> PromptInputs {
    let mut r = rng(seed);
    PromptInputs {
        h: gaussian(n, d, &mut r),
        text: Some(gaussian(n, d_llm, &mut r)),
        images: Some(Arc::new(gaussian(n * x, d_img, &mut r))),
        images_per_region: x,
    }
}

pub fn tiny_prompt(d: usize) -> PromptConfig {
    PromptConfig {
        d_text: d,
        d_key: 5,
        d_proj: 4,
        images_per_region: 3,
        hidden: 6,
        epochs: 50,
        lr: 1e-2,
        weight_decay: 0.0,
        ..Default::default()
    }
}

/// Central-difference check of `grads` against `loss` on `samples` randomly
/// chosen scalars. Returns the largest relative error.
///
/// The denominator is floored at 1e-5: below that the central difference is
/// dominated by round-off (about `ε·|loss|/h`), so tiny gradients are in
/// effect compared with an absolute tolerance of 1e-9.
pub fn max_fd_error(
    store: &mut flexireg_core::nn::ParamStore,
    grads: &[Mat],
    samples: usize,
    seed: u64,
    loss: impl Fn(&flexireg_core::nn::ParamStore) -> f64,
) -> f64 {
    let mut r = rng(seed);
    let total = store.num_scalars();
    let ids: Vec<_> = store.ids().collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (id, i, j) = store.locate(r.random_range(0..total));
        let k = ids.iter().position(|x| *x == id).unwrap();
        let x0 = store.get(id)[[i, j]];
        store.get_mut(id)[[i, j]] = x0 + h;
        let up = loss(store);
        store.get_mut(id)[[i, j]] = x0 - h;
        let down = loss(store);
        store.get_mut(id)[[i, j]] = x0;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[k][[i, j]];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
        worst = worst.max(err);
    }
    worst
}
