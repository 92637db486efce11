//! Text-region alignment through a dimension-wise similarity matrix.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::nn::{Binding, Mlp, ParamId, ParamStore};

/// `M = softmax_rows((H W_Q)ᵀ (T W_K))` is `d × d_key`; the output is
/// `MLP((T W_V) Mᵀ + H)`.
#[derive(Clone, Debug)]
pub struct TextAlign {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub mlp: Mlp,
}

impl TextAlign {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        d_llm: usize,
        d_key: usize,
        d_text: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            wq: store.glorot("talign.W_Q", d, d, rng),
            wk: store.glorot("talign.W_K", d_llm, d_key, rng),
            wv: store.glorot("talign.W_V", d_llm, d_key, rng),
            mlp: Mlp::new(store, "talign.mlp", &[d, d, d_text], rng),
        }
    }

    /// `h` is `n × d`, `text` is `n × d_llm`. Pushes `M` onto `probes`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, h: Var, text: Var, probes: &mut Vec<Var>) -> Var {
        let q = g.matmul(h, p.var(self.wq));
        let k = g.matmul(text, p.var(self.wk));
        let v = g.matmul(text, p.var(self.wv));
        let qt = g.transpose(q);
        let s = g.matmul(qt, k);
        let m = g.softmax_rows(s);
        probes.push(m);
        let mt = g.transpose(m);
        let retrieved = g.matmul(v, mt);
        let x = g.add(retrieved, h);
        self.mlp.forward(g, p, x)
    }
}
