//! Trainable parameter storage, basic layers and the Adam optimizer.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Grads, Mat, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Named, ordered collection of parameter matrices.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::ones((rows, cols)))
    }

    /// Glorot-uniform initialization.
    pub fn glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let v = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a));
        self.add(name, v)
    }

    pub fn normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let v = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, v)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Push every parameter onto `g` as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        Binding(self.values.iter().map(|v| g.param(v.clone())).collect())
    }

    /// Flat (id, row, col) address of the k-th scalar.
    pub fn locate(&self, mut k: usize) -> (ParamId, usize, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return (ParamId(i), k / v.ncols(), k % v.ncols());
            }
            k -= v.len();
        }
        panic!("scalar index out of range");
    }

    pub fn to_named(&self) -> BTreeMap<String, Mat> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }
}

/// Graph handles for every parameter in a [`ParamStore`], in store order.
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Extract one gradient per parameter (zeros for unused parameters).
    pub fn collect(&self, g: &Graph, grads: &mut Grads) -> Vec<Mat> {
        self.0
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Array2::zeros(g.shape(v))))
            .collect()
    }
}

/// `x · W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), input, output, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, output));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Var {
        let y = g.matmul(x, p.var(self.w));
        match self.b {
            Some(b) => g.add_row(y, p.var(b)),
            None => y,
        }
    }
}

/// Linear layers with LeakyReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), 1, width),
            beta: store.zeros(format!("{name}.beta"), 1, width),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let s = g.mul_row(n, p.var(self.gamma));
        g.add_row(s, p.var(self.beta))
    }
}

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Array2::zeros(store.get(id).dim()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let param = store.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(param)
                .and(&grads[i])
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + self.weight_decay * *p;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= self.lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }
}
