use ndarray::Array2;
use rand::Rng;

use super::losses::{count_loss, reconstruction_loss, triplet_loss, Triplet};
use super::{CellInputs, GridLearnerConfig, View};
use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, LayerNorm, Linear, Mlp, ParamId, ParamStore, LEAKY_SLOPE};
use crate::rng::{substream, streams, StageRng};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Inverted dropout with constant masks; a no-op without a generator.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut StageRng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_fn(g.shape(x), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = g.constant(mask);
        g.mul(x, mask)
    }
}

/// Graph attention over the dense weighted graph `A`.
///
/// `α_ij = softmax_j LeakyReLU(a₁·(zW)_i + a₂·(zW)_j + A_ij (a₃·w))`,
/// output `LeakyReLU(α · zW)`.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub w: ParamId,
    pub a: ParamId,
    pub wv: ParamId,
}

impl GatLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            w: store.glorot(format!("{name}.W"), d, d, rng),
            a: store.glorot(format!("{name}.a"), 1, 3 * d, rng),
            wv: store.glorot(format!("{name}.w"), 1, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, z: Var, adj: Var, probes: &mut Vec<Var>) -> Var {
        let d = g.shape(z).1;
        let zw = g.matmul(z, p.var(self.w));
        let a = p.var(self.a);
        let a1 = g.slice_cols(a, 0, d);
        let a2 = g.slice_cols(a, d, 2 * d);
        let a3 = g.slice_cols(a, 2 * d, 3 * d);
        let a1t = g.transpose(a1);
        let src = g.matmul(zw, a1t);
        let a2t = g.transpose(a2);
        let dst = g.matmul(zw, a2t);
        let dst = g.transpose(dst);
        let edge = g.row_dot(p.var(self.wv), a3);
        let logits = g.mul_scalar(adj, edge);
        let logits = g.add_col(logits, src);
        let logits = g.add_row(logits, dst);
        let logits = g.leaky_relu(logits, ATTENTION_SLOPE);
        let alpha = g.softmax_rows(logits);
        probes.push(alpha);
        let out = g.matmul(alpha, zw);
        g.leaky_relu(out, LEAKY_SLOPE)
    }
}

#[derive(Clone, Debug)]
struct GatBranch {
    z0: ParamId,
    layers: Vec<GatLayer>,
}

/// Multi-head self-attention across views, separately for every cell.
#[derive(Clone, Debug)]
pub struct InterView {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl InterView {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            wq: store.glorot(format!("{name}.W_Q"), d, d, rng),
            wk: store.glorot(format!("{name}.W_K"), d, d, rng),
            wv: store.glorot(format!("{name}.W_V"), d, d, rng),
            wo: store.glorot(format!("{name}.W_O"), d, d, rng),
            heads,
        }
    }

    /// `views[k]` is `m × d`; returns one `m × d` matrix per view.
    pub fn forward(&self, g: &mut Graph, p: &Binding, views: &[Var], probes: &mut Vec<Var>) -> Vec<Var> {
        let d = g.shape(views[0]).1;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let proj = |g: &mut Graph, w: ParamId| -> Vec<Var> { views.iter().map(|&z| g.matmul(z, p.var(w))).collect() };
        let q = proj(g, self.wq);
        let k = proj(g, self.wk);
        let v = proj(g, self.wv);
        let split = |g: &mut Graph, xs: &[Var]| -> Vec<Vec<Var>> {
            xs.iter()
                .map(|&x| (0..self.heads).map(|h| g.slice_cols(x, h * dh, (h + 1) * dh)).collect())
                .collect()
        };
        let (qh, kh, vh) = (split(g, &q), split(g, &k), split(g, &v));
        let mut out = Vec::with_capacity(views.len());
        for x in 0..views.len() {
            let mut head_out = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let scores: Vec<Var> = (0..views.len()).map(|y| g.row_dot(qh[x][h], kh[y][h])).collect();
                let scores = g.concat_cols(&scores);
                let scores = g.scale(scores, scale);
                let att = g.softmax_rows(scores);
                probes.push(att);
                let mut acc = None;
                for (y, vy) in vh.iter().enumerate() {
                    let wy = g.slice_cols(att, y, y + 1);
                    let term = g.mul_col(vy[h], wy);
                    acc = Some(match acc {
                        Some(a) => g.add(a, term),
                        None => term,
                    });
                }
                head_out.push(acc.expect("at least one view"));
            }
            let merged = g.concat_cols(&head_out);
            out.push(g.matmul(merged, p.var(self.wo)));
        }
        out
    }
}

/// View-level attentive fusion into a single `m × d` matrix.
#[derive(Clone, Debug)]
pub struct ViewFusion {
    pub w: ParamId,
    pub a: ParamId,
}

impl ViewFusion {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            w: store.glorot(format!("{name}.W"), d, d, rng),
            a: store.glorot(format!("{name}.a"), 1, 2 * d, rng),
        }
    }

    /// Returns the fused matrix and the `1 × k` view weights.
    pub fn forward(&self, g: &mut Graph, p: &Binding, views: &[Var]) -> (Var, Var) {
        let (m, d) = g.shape(views[0]);
        let a = p.var(self.a);
        let al = g.slice_cols(a, 0, d);
        let al = g.transpose(al);
        let ar = g.slice_cols(a, d, 2 * d);
        let ar = g.transpose(ar);
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &z in views {
            let zw = g.matmul(z, p.var(self.w));
            left.push(g.matmul(zw, al));
            right.push(g.matmul(zw, ar));
        }
        let mut logits = Vec::with_capacity(views.len());
        for &l in &left {
            let mut total = None;
            for &r in &right {
                let s = g.add(l, r);
                let s = g.leaky_relu(s, ATTENTION_SLOPE);
                let s = g.sum_all(s);
                total = Some(match total {
                    Some(t) => g.add(t, s),
                    None => s,
                });
            }
            logits.push(total.expect("at least one view"));
        }
        let logits = g.concat_cols(&logits);
        let logits = g.scale(logits, 1.0 / m as f64);
        let alpha = g.softmax_rows(logits);
        let mut fused = None;
        for (k, &z) in views.iter().enumerate() {
            let w = g.slice_cols(alpha, k, k + 1);
            let term = g.mul_scalar(z, w);
            fused = Some(match fused {
                Some(f) => g.add(f, term),
                None => term,
            });
        }
        (fused.expect("at least one view"), alpha)
    }
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
pub fn cell_self_attention(
    g: &mut Graph,
    p: &Binding,
    att: &InterView,
    x: Var,
    probes: &mut Vec<Var>,
) -> Var {
    let d = g.shape(x).1;
    let dh = d / att.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = g.matmul(x, p.var(att.wq));
    let k = g.matmul(x, p.var(att.wk));
    let v = g.matmul(x, p.var(att.wv));
    let mut heads = Vec::with_capacity(att.heads);
    for h in 0..att.heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        let kt = g.transpose(kh);
        let s = g.matmul(qh, kt);
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s);
        probes.push(a);
        heads.push(g.matmul(a, vh));
    }
    let merged = g.concat_cols(&heads);
    g.matmul(merged, p.var(att.wo))
}

#[derive(Clone, Debug)]
struct FusionLayer {
    attention: InterView,
    ln1: LayerNorm,
    mlp: Mlp,
    ln2: LayerNorm,
}

/// Output of one forward pass.
pub struct Forward {
    /// Final cell embeddings, `m × d`.
    pub e: Var,
    /// Per-view task heads `MLP_X(E)`.
    pub heads: Vec<(View, Var)>,
    /// Predicted POI totals, `m × 1` (satellite view only).
    pub count: Option<Var>,
    /// Mixing weight in `[0, 1]`.
    pub beta: Var,
    pub view_weights: Var,
    pub intra: Vec<Var>,
    pub inter: Vec<Var>,
    /// Every softmax output of the pass.
    pub softmaxes: Vec<Var>,
}

impl Forward {
    pub fn head(&self, view: View) -> Option<Var> {
        self.heads.iter().find(|(v, _)| *v == view).map(|&(_, h)| h)
    }
}

/// Loss nodes; inactive views have no term.
pub struct LossTerms {
    pub poi: Option<Var>,
    pub landuse: Option<Var>,
    pub neighbor: Option<Var>,
    pub satellite: Option<Var>,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct GridLearner {
    pub cfg: GridLearnerConfig,
    pub store: ParamStore,
    pub views: Vec<View>,
    m: usize,
    sat_dim: usize,
    gats: Vec<(View, GatBranch)>,
    satellite: Option<Mlp>,
    inter: InterView,
    beta: ParamId,
    view_fusion: ViewFusion,
    fusion: Vec<FusionLayer>,
    heads: Vec<(View, Mlp)>,
    count: Option<Linear>,
}

impl GridLearner {
    /// Fresh parameters drawn from the `init` stream of `cfg.seed`.
    pub fn new(cfg: &GridLearnerConfig, m: usize, sat_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if m == 0 || sat_dim == 0 {
            return Err(Error::invalid("grid learner needs at least one cell and satellite feature"));
        }
        let mut rng = substream(cfg.seed, streams::INIT);
        let mut store = ParamStore::new();
        let d = cfg.d;
        let views = cfg.active_views();
        let mut gats = Vec::new();
        let mut satellite = None;
        for &v in &views {
            if v == View::Satellite {
                satellite = Some(Mlp::new(&mut store, "sat", &[sat_dim, d, d], &mut rng));
                continue;
            }
            let z0 = store.normal(format!("gat.{}.z0", v.tag()), m, d, (1.0 / d as f64).sqrt(), &mut rng);
            let layers = (0..cfg.gat_layers)
                .map(|l| GatLayer::new(&mut store, &format!("gat.{}.{l}", v.tag()), d, &mut rng))
                .collect();
            gats.push((v, GatBranch { z0, layers }));
        }
        let inter = InterView::new(&mut store, "inter", d, cfg.heads, &mut rng);
        let beta = store.zeros("beta", 1, 1);
        let view_fusion = ViewFusion::new(&mut store, "view_fusion", d, &mut rng);
        let fusion = (0..cfg.fusion_layers)
            .map(|l| FusionLayer {
                attention: InterView::new(&mut store, &format!("cell_fusion.{l}.att"), d, cfg.heads, &mut rng),
                ln1: LayerNorm::new(&mut store, &format!("cell_fusion.{l}.ln1"), d),
                mlp: Mlp::new(&mut store, &format!("cell_fusion.{l}.mlp"), &[d, d, d], &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("cell_fusion.{l}.ln2"), d),
            })
            .collect();
        let heads = views
            .iter()
            .map(|&v| (v, Mlp::new(&mut store, &format!("head.{}", v.tag()), &[d, d, d], &mut rng)))
            .collect();
        let count = views
            .contains(&View::Satellite)
            .then(|| Linear::new(&mut store, "head.count", d, 1, true, &mut rng));
        Ok(Self {
            cfg: cfg.clone(),
            store,
            views,
            m,
            sat_dim,
            gats,
            satellite,
            inter,
            beta,
            view_fusion,
            fusion,
            heads,
            count,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.m
    }

    fn check_inputs(&self, inputs: &CellInputs) -> Result<()> {
        if inputs.len() != self.m {
            return Err(Error::invalid(format!("model built for {} cells, inputs have {}", self.m, inputs.len())));
        }
        if self.satellite.is_some() && inputs.satellite.ncols() != self.sat_dim {
            return Err(Error::invalid(format!(
                "model expects {}-dim satellite features, got {}",
                self.sat_dim,
                inputs.satellite.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, inputs: &CellInputs, dropout: &mut Dropout) -> Result<Forward> {
        self.check_inputs(inputs)?;
        let mut softmaxes = Vec::new();
        let mut intra = Vec::with_capacity(self.views.len());
        for &v in &self.views {
            let z = if v == View::Satellite {
                let sat = g.constant(inputs.satellite.clone());
                self.satellite.as_ref().expect("satellite branch").forward(g, p, sat)
            } else {
                let branch = &self.gats.iter().find(|(bv, _)| *bv == v).expect("gat branch").1;
                let adj = g.constant(inputs.graph(v).expect("graph view").clone());
                let mut z = p.var(branch.z0);
                for layer in &branch.layers {
                    z = layer.forward(g, p, z, adj, &mut softmaxes);
                }
                z
            };
            intra.push(z);
        }
        let inter = self.inter.forward(g, p, &intra, &mut softmaxes);
        let beta = g.sigmoid(p.var(self.beta));
        let one = g.scalar(1.0);
        let rest = g.sub(one, beta);
        let mixed: Vec<Var> = intra
            .iter()
            .zip(&inter)
            .map(|(&a, &b)| {
                let a = g.mul_scalar(a, beta);
                let b = g.mul_scalar(b, rest);
                g.add(a, b)
            })
            .collect();
        let (mut z, view_weights) = self.view_fusion.forward(g, p, &mixed);
        softmaxes.push(view_weights);
        for layer in &self.fusion {
            let att = cell_self_attention(g, p, &layer.attention, z, &mut softmaxes);
            let att = dropout.apply(g, att);
            let res = g.add(z, att);
            let z1 = layer.ln1.forward(g, p, res);
            let ff = layer.mlp.forward(g, p, z1);
            let ff = dropout.apply(g, ff);
            let res = g.add(z1, ff);
            z = layer.ln2.forward(g, p, res);
        }
        let heads: Vec<(View, Var)> = self.heads.iter().map(|(v, mlp)| (*v, mlp.forward(g, p, z))).collect();
        let count = self.count.as_ref().map(|lin| {
            let si = heads.iter().find(|(v, _)| *v == View::Satellite).expect("si head").1;
            lin.forward(g, p, si)
        });
        Ok(Forward {
            e: z,
            heads,
            count,
            beta,
            view_weights,
            intra,
            inter,
            softmaxes,
        })
    }

    /// Forward pass plus the summed objective.
    pub fn losses(
        &self,
        g: &mut Graph,
        p: &Binding,
        inputs: &CellInputs,
        triplets: &[Triplet],
        dropout: &mut Dropout,
    ) -> Result<(Forward, LossTerms)> {
        let fwd = self.forward(g, p, inputs, dropout)?;
        let mut terms = LossTerms {
            poi: None,
            landuse: None,
            neighbor: None,
            satellite: None,
            total: g.scalar(0.0),
        };
        for &(v, h) in &fwd.heads {
            let l = match v {
                View::Poi | View::Landuse => {
                    let a = g.constant(inputs.graph(v).expect("graph view").clone());
                    reconstruction_loss(g, h, a)
                }
                View::Neighbor => triplet_loss(g, h, triplets, self.cfg.margin),
                View::Satellite => count_loss(g, fwd.count.expect("count head"), &inputs.poi_totals(), self.cfg.beta_loss),
            };
            match v {
                View::Poi => terms.poi = Some(l),
                View::Landuse => terms.landuse = Some(l),
                View::Neighbor => terms.neighbor = Some(l),
                View::Satellite => terms.satellite = Some(l),
            }
            terms.total = g.add(terms.total, l);
        }
        Ok((fwd, terms))
    }

    /// Loss value and one gradient per parameter, with dropout off.
    pub fn loss_and_grads(&self, inputs: &CellInputs, triplets: &[Triplet]) -> Result<(f64, Vec<Mat>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (_, terms) = self.losses(&mut g, &p, inputs, triplets, &mut Dropout::off())?;
        let mut grads = g.backward(terms.total);
        Ok((g.scalar_value(terms.total), p.collect(&g, &mut grads)))
    }

    pub fn loss_value(&self, inputs: &CellInputs, triplets: &[Triplet]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (_, terms) = self.losses(&mut g, &p, inputs, triplets, &mut Dropout::off())?;
        Ok(g.scalar_value(terms.total))
    }

    /// Eval-mode cell embeddings.
    pub fn embed(&self, inputs: &CellInputs) -> Result<Mat> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let fwd = self.forward(&mut g, &p, inputs, &mut Dropout::off())?;
        Ok(g.value(fwd.e).clone())
    }

    pub fn beta(&self) -> f64 {
        crate::autograd::sigmoid(self.store.get(self.beta)[[0, 0]])
    }
}
