//! Street-view image embeddings: a contrastive projection head trained
//! against per-cell environmental contexts, and per-region image selection.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::geometry::{OverlapMap, Region};
use crate::ingest::SvRef;
use crate::nn::{Adam, ParamStore};
use crate::rng::{streams, substream};

/// Mean of the rows of `u`.
pub fn env_context(u: &Mat) -> Result<Vec<f64>> {
    if u.nrows() == 0 {
        return Err(Error::invalid("environmental context of a cell without images"));
    }
    Ok(u.mean_axis(Axis(0)).expect("non-empty").to_vec())
}

/// InfoNCE from raw similarities `sims[r, k] = u_r · v_k` (`N × m`).
///
/// `−(1/m) Σ_r log softmax_k(sims[r, ·] / τ)[cell_of[r]]`; the denominator
/// runs over all `m` contexts including the positive.
pub fn infonce_from_sims(g: &mut Graph, sims: Var, cell_of: &[usize], tau: f64) -> Result<Var> {
    let (n, m) = g.shape(sims);
    if m < 2 {
        return Err(Error::invalid("InfoNCE needs at least two cells"));
    }
    if cell_of.len() != n || cell_of.iter().any(|&c| c >= m) {
        return Err(Error::invalid("image-to-cell map does not match the similarity matrix"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let logits = g.scale(sims, 1.0 / tau);
    let ls = g.log_softmax_rows(logits);
    let picked = g.pick_cols(ls, cell_of);
    let total = g.sum_all(picked);
    Ok(g.scale(total, -1.0 / m as f64))
}

/// InfoNCE of image embeddings `u` (`N × k`) against contexts `v` (`m × k`).
pub fn infonce_loss(g: &mut Graph, u: Var, v: Var, cell_of: &[usize], tau: f64) -> Result<Var> {
    let vt = g.transpose(v);
    let sims = g.matmul(u, vt);
    infonce_from_sims(g, sims, cell_of, tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreetViewConfig {
    /// Rank of the residual adapter.
    pub rank: usize,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for StreetViewConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            tau: 0.5,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Projection `u = x + x·A·B` over frozen image features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvHead {
    pub a: Mat,
    pub b: Mat,
}

impl SvHead {
    pub fn identity(dim: usize) -> Self {
        Self {
            a: Array2::zeros((dim, 0)),
            b: Array2::zeros((0, dim)),
        }
    }

    pub fn project(&self, x: &Mat) -> Mat {
        if self.a.ncols() == 0 {
            return x.clone();
        }
        x + &x.dot(&self.a).dot(&self.b)
    }
}

pub struct TrainedSvHead {
    pub head: SvHead,
    /// Loss per epoch.
    pub curve: Vec<f64>,
}

/// Dense cell indices `0..k` for the cells that own at least one image.
fn compact_cells(cell_of: &[usize]) -> (Vec<usize>, usize) {
    let ids: BTreeSet<usize> = cell_of.iter().copied().collect();
    let map: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    (cell_of.iter().map(|c| map[c]).collect(), ids.len())
}

fn group_means(x: &Mat, group: &[usize], k: usize) -> Mat {
    let mut out = Array2::zeros((k, x.ncols()));
    let mut count = vec![0.0; k];
    for (row, &c) in x.rows().into_iter().zip(group) {
        let mut o = out.row_mut(c);
        o += &row;
        count[c] += 1.0;
    }
    for (mut o, n) in out.rows_mut().into_iter().zip(count) {
        o /= n;
    }
    out
}

/// Train the adapter by minimizing InfoNCE over all images.
///
/// With `W = I + AB` and contexts `V = X̄W` (averaging commutes with the
/// linear head), the similarities are
/// `U Vᵀ = X W Wᵀ X̄ᵀ = X X̄ᵀ + (XA)(X̄Bᵀ)ᵀ + (XBᵀ)(X̄A)ᵀ + (XA)(BBᵀ)(X̄A)ᵀ`, so the
/// `N × m` Gram term is computed once and each epoch only touches rank-`r`
/// factors.
pub fn train_streetview_encoder(features: &Mat, cell_of: &[usize], cfg: &StreetViewConfig) -> Result<TrainedSvHead> {
    let (n, dim) = features.dim();
    if n != cell_of.len() {
        return Err(Error::invalid(format!("{n} image features but {} cell ids", cell_of.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("street-view features contain non-finite values"));
    }
    if cfg.rank == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("street-view head needs positive rank, epochs and learning rate"));
    }
    let (group, m) = compact_cells(cell_of);
    if m < 2 {
        return Err(Error::invalid("InfoNCE needs images from at least two cells"));
    }
    let xbar = group_means(features, &group, m);
    let gram = features.dot(&xbar.t());
    let mut rng = substream(cfg.seed, streams::STREETVIEW_HEAD);
    let mut store = ParamStore::new();
    let a = store.normal("sv.A", dim, cfg.rank, 1.0 / (dim as f64).sqrt(), &mut rng);
    let b = store.zeros("sv.B", cfg.rank, dim);
    let mut opt = Adam::new(&store, cfg.lr, 0.0);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(features.clone());
        let xb = g.constant(xbar.clone());
        let gm = g.constant(gram.clone());
        let (av, bv) = (p.var(a), p.var(b));
        let bt = g.transpose(bv);
        let xa = g.matmul(x, av);
        let xbt = g.matmul(x, bt);
        let xba = g.matmul(xb, av);
        let xbbt = g.matmul(xb, bt);
        let xbbt_t = g.transpose(xbbt);
        let t1 = g.matmul(xa, xbbt_t);
        let xba_t = g.transpose(xba);
        let t2 = g.matmul(xbt, xba_t);
        let bbt = g.matmul(bv, bt);
        let t3 = g.matmul(xa, bbt);
        let t3 = g.matmul(t3, xba_t);
        let sims = g.add(gm, t1);
        let sims = g.add(sims, t2);
        let sims = g.add(sims, t3);
        let loss = infonce_from_sims(&mut g, sims, &group, cfg.tau)?;
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                stage: "street-view head",
                epoch,
                detail: format!("InfoNCE = {value}"),
            });
        }
        let mut grads = g.backward(loss);
        let grads = p.collect(&g, &mut grads);
        opt.step(&mut store, &grads);
        curve.push(value);
    }
    Ok(TrainedSvHead {
        head: SvHead {
            a: store.get(a).clone(),
            b: store.get(b).clone(),
        },
        curve,
    })
}

/// Fixed-size image sample per region, as row indices into the image list.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionImages {
    pub per_region: Vec<Vec<usize>>,
    /// Regions without own images that sampled from nearby regions.
    pub borrowed: Vec<u64>,
}

/// Assign images to the region containing their location and draw exactly
/// `x` per region: a uniform sample without replacement when enough images
/// exist, otherwise every image once plus uniform draws with replacement.
/// Regions without images sample from the nearest ring of regions (regions
/// sharing a grid cell are neighbours) that has any.
pub fn select_region_images(
    regions: &[Region],
    images: &[SvRef],
    overlap: &OverlapMap,
    x: usize,
    seed: u64,
) -> Result<RegionImages> {
    if x == 0 {
        return Err(Error::invalid("number of images per region must be positive"));
    }
    if images.is_empty() {
        return Err(Error::invalid("no street-view images available"));
    }
    let bboxes: Vec<_> = regions.iter().map(|r| r.shape.bbox()).collect();
    let mut own: Vec<Vec<usize>> = vec![Vec::new(); regions.len()];
    for (k, img) in images.iter().enumerate() {
        let p = img.location;
        let hit = regions.iter().zip(&bboxes).position(|(r, bb)| {
            bb.is_some_and(|b| p.x >= b.min_x && p.x <= b.max_x && p.y >= b.min_y && p.y <= b.max_y)
                && r.shape.contains(p)
        });
        if let Some(r) = hit {
            own[r].push(k);
        }
    }
    if own.iter().all(Vec::is_empty) {
        return Err(Error::invalid("no street-view image lies inside any region"));
    }

    // Regions sharing a cell are neighbours.
    let mut by_cell: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ri, r) in regions.iter().enumerate() {
        for &(c, _) in overlap.cells_of(r.id) {
            by_cell.entry(c).or_default().push(ri);
        }
    }
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); regions.len()];
    for rs in by_cell.values() {
        for &a in rs {
            for &b in rs {
                if a != b {
                    nbrs[a].insert(b);
                }
            }
        }
    }

    let mut rng = substream(seed, streams::SELECTION);
    let mut per_region = Vec::with_capacity(regions.len());
    let mut borrowed = Vec::new();
    for ri in 0..regions.len() {
        let pool: Vec<usize> = if own[ri].is_empty() {
            borrowed.push(regions[ri].id);
            borrow_pool(ri, &own, &nbrs)
        } else {
            own[ri].clone()
        };
        let pool = if pool.is_empty() {
            // Disconnected from every region with images.
            own.iter().flatten().copied().collect()
        } else {
            pool
        };
        per_region.push(draw(&pool, x, &mut rng));
    }
    Ok(RegionImages { per_region, borrowed })
}

fn borrow_pool(start: usize, own: &[Vec<usize>], nbrs: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &r in &frontier {
            for &q in &nbrs[r] {
                if seen.insert(q) {
                    next.push(q);
                }
            }
        }
        let pool: Vec<usize> = next.iter().flat_map(|&q| own[q].iter().copied()).collect();
        if !pool.is_empty() {
            let mut pool = pool;
            pool.sort_unstable();
            return pool;
        }
        frontier = next;
    }
    Vec::new()
}

fn draw<R: Rng>(pool: &[usize], x: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= x {
        let mut p = pool.to_vec();
        p.shuffle(rng);
        p.truncate(x);
        p
    } else {
        let mut p = pool.to_vec();
        while p.len() < x {
            p.push(pool[rng.random_range(0..pool.len())]);
        }
        p.shuffle(rng);
        p
    }
}
