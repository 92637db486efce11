//! Cross-attention from a region embedding to its sampled street-view images.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Graph, Mat, Var};
use crate::nn::{Binding, Mlp, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct SvAlign {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub mlp: Mlp,
    pub d_proj: usize,
}

impl SvAlign {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, d_img: usize, d_proj: usize, rng: &mut R) -> Self {
        Self {
            wq: store.glorot("svalign.W_Q", d, d_proj, rng),
            wk: store.glorot("svalign.W_K", d_img, d_proj, rng),
            wv: store.glorot("svalign.W_V", d_img, d_proj, rng),
            mlp: Mlp::new(store, "svalign.mlp", &[d_proj, d, d], rng),
            d_proj,
        }
    }

    /// `h` is `n × d`; `images` stacks each region's `x` image embeddings,
    /// region-major (`n·x × d_img`). Pushes the `n × x` attention onto
    /// `probes`.
    ///
    /// Computed as `q_i W_Kᵀ · u` per image, and values as
    /// `(Σ_j a_ij u_ij) W_V`, which equals `softmax(QKᵀ/√d_proj) V` per
    /// region without materializing `K` and `V`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, h: Var, images: &Arc<Mat>, probes: &mut Vec<Var>) -> Var {
        let q = g.matmul(h, p.var(self.wq));
        let wkt = g.transpose(p.var(self.wk));
        let qk = g.matmul(q, wkt);
        let s = g.group_dots(qk, images.clone());
        let s = g.scale(s, 1.0 / (self.d_proj as f64).sqrt());
        let a = g.softmax_rows(s);
        probes.push(a);
        let pooled = g.group_pool(a, images.clone());
        let vals = g.matmul(pooled, p.var(self.wv));
        self.mlp.forward(g, p, vals)
    }
}
