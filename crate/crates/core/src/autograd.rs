//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a write-once tape: every operation appends a node holding its
//! forward value, and [`Graph::backward`] walks the tape in reverse to produce
//! gradients for every node that (transitively) depends on a parameter leaf.
//! Vectors are represented as `1×n` rows or `m×1` columns; scalars as `1×1`.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    SmoothL1(Var, f64),
    RowNorm(Var),
    RowDot(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSums(Var),
    ColSums(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    Reshape(Var),
    SumRowGroups(Var, usize),
    GroupDots(Var, Arc<Mat>),
    GroupPool(Var, Arc<Mat>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
    /// Op-specific saved tensor (layer-norm reciprocal std).
    aux: Option<Mat>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch {ar}x{ac} · {br}x{bc}");
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    /// `a (m×n) + b (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "add_row expects 1×{n}");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::AddRow(a, b), ng)
    }

    /// `a (m×n) + b (m×1)` broadcast over columns.
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "add_col expects {m}×1");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::AddCol(a, b), ng)
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "mul_row expects 1×{n}");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MulRow(a, b), ng)
    }

    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "mul_col expects {m}×1");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MulCol(a, b), ng)
    }

    /// `a * s` where `s` is a `1×1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects a 1×1 factor");
        let k = self.scalar_value(s);
        let v = self.value(a) * k;
        let ng = self.ng(a) || self.ng(s);
        self.push(v, Op::MulScalar(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        let ng = self.ng(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    /// Element-wise smooth-L1 of a residual with knee `beta`.
    pub fn smooth_l1(&mut self, a: Var, beta: f64) -> Var {
        let v = self.value(a).mapv(|x| smooth_l1(x, beta));
        let ng = self.ng(a);
        self.push(v, Op::SmoothL1(a, beta), ng)
    }

    /// Euclidean norm of each row, `m×1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::RowNorm(a), ng)
    }

    /// Row-wise inner products, `m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "row_dot shape mismatch");
        let mut v = Array2::zeros((self.shape(a).0, 1));
        Zip::from(v.rows_mut())
            .and(self.value(a).rows())
            .and(self.value(b).rows())
            .for_each(|mut o, x, y| o[0] = x.dot(&y));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::RowDot(a, b), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv = Array2::zeros((x.nrows(), 1));
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * r);
            inv[[i, 0]] = r;
        }
        let ng = self.ng(a);
        let out = self.push(v, Op::LayerNormRows(a), ng);
        self.nodes[out.0].aux = Some(inv);
        out
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        let ng = self.ng(a);
        self.push(v, Op::MeanAll(a), ng)
    }

    /// Sum across columns: `m×n -> m×1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::RowSums(a), ng)
    }

    /// Sum across rows: `m×n -> 1×n`.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(v, Op::ColSums(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero parts");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.nrows(), rows, "concat row mismatch");
            v.slice_mut(s![.., at..at + x.ncols()]).assign(x);
            at += x.ncols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start, end), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// `out[i] = a[i, cols[i]]`, `m×1`.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len(), "pick_cols needs one column per row");
        let v = Array2::from_shape_fn((cols.len(), 1), |(i, _)| x[[i, cols[i]]]);
        let ng = self.ng(a);
        self.push(v, Op::PickCols(a, cols.to_vec()), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let flat: Vec<f64> = x.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// Sum consecutive blocks of `group` rows: `(k·group)×n -> k×n`.
    pub fn sum_row_groups(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.nrows() % group == 0, "rows not divisible by group");
        let k = x.nrows() / group;
        let mut v = Array2::zeros((k, x.ncols()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut o = v.row_mut(i / group);
            o += &row;
        }
        let ng = self.ng(a);
        self.push(v, Op::SumRowGroups(a, group), ng)
    }

    /// `out[i, j] = a_i · c_{i·x + j}` where the constant `c` stacks `x`
    /// rows per row of `a`. No gradient flows into `c`.
    pub fn group_dots(&mut self, a: Var, c: Arc<Mat>) -> Var {
        let v = group_dots(self.value(a), &c);
        let ng = self.ng(a);
        self.push(v, Op::GroupDots(a, c), ng)
    }

    /// `out_i = Σ_j w[i, j] c_{i·x + j}` for `w` of shape `n × x`.
    pub fn group_pool(&mut self, w: Var, c: Arc<Mat>) -> Var {
        let v = group_pool(self.value(w), &c);
        let ng = self.ng(w);
        self.push(v, Op::GroupPool(w, c), ng)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.shape(out), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Grads { grads }
    }

    fn backprop(&self, node: &Node, dy: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        // The gradient expression is only evaluated for inputs that need it.
        macro_rules! acc {
            ($v:expr, $g:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].needs_grad {
                    let g: Mat = $g;
                    match &mut grads[v.0] {
                        Some(existing) => *existing += &g,
                        slot => *slot = Some(g),
                    }
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc!(*a, dy.dot(&val(*b).t()));
                }
                if self.ng(*b) {
                    acc!(*b, val(*a).t().dot(dy));
                }
            }
            Op::Transpose(a) => acc!(*a, dy.t().to_owned()),
            Op::Add(a, b) => {
                acc!(*a, dy.clone());
                acc!(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc!(*a, dy.clone());
                acc!(*b, -dy);
            }
            Op::Mul(a, b) => {
                acc!(*a, dy * val(*b));
                acc!(*b, dy * val(*a));
            }
            Op::Scale(a, k) => acc!(*a, dy * *k),
            Op::AddRow(a, b) => {
                acc!(*a, dy.clone());
                acc!(*b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddCol(a, b) => {
                acc!(*a, dy.clone());
                acc!(*b, dy.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::MulRow(a, b) => {
                acc!(*a, dy * val(*b));
                acc!(*b, (dy * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, b) => {
                acc!(*a, dy * val(*b));
                acc!(*b, (dy * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::MulScalar(a, s) => {
                let k = val(*s)[[0, 0]];
                acc!(*a, dy * k);
                acc!(*s, Array2::from_elem((1, 1), (dy * val(*a)).sum()));
            }
            Op::LeakyRelu(a, slope) => {
                let mut g = dy.clone();
                Zip::from(&mut g)
                    .and(val(*a))
                    .for_each(|g, &x| *g *= if x > 0.0 { 1.0 } else { *slope });
                acc!(*a, g);
            }
            Op::Relu(a) => {
                let mut g = dy.clone();
                Zip::from(&mut g)
                    .and(val(*a))
                    .for_each(|g, &x| *g *= if x > 0.0 { 1.0 } else { 0.0 });
                acc!(*a, g);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc!(*a, dy * &y.mapv(|y| y * (1.0 - y)));
            }
            Op::Abs(a) => {
                let mut g = dy.clone();
                Zip::from(&mut g).and(val(*a)).for_each(|g, &x| {
                    *g *= if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc!(*a, g);
            }
            Op::Square(a) => acc!(*a, dy * &val(*a).mapv(|x| 2.0 * x)),
            Op::SmoothL1(a, beta) => {
                let mut g = dy.clone();
                Zip::from(&mut g)
                    .and(val(*a))
                    .for_each(|g, &x| *g *= smooth_l1_grad(x, *beta));
                acc!(*a, g);
            }
            Op::RowNorm(a) => {
                let x = val(*a);
                let mut g = x.clone();
                for (i, mut row) in g.rows_mut().into_iter().enumerate() {
                    let n = node.value[[i, 0]];
                    if n > 0.0 {
                        row.mapv_inplace(|v| v * dy[[i, 0]] / n);
                    } else {
                        row.fill(0.0);
                    }
                }
                acc!(*a, g);
            }
            Op::RowDot(a, b) => {
                acc!(*a, val(*b) * dy);
                acc!(*b, val(*a) * dy);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut g = dy * y;
                let sums = g.sum_axis(Axis(1));
                Zip::from(g.rows_mut())
                    .and(y.rows())
                    .and(&sums)
                    .for_each(|mut gr, yr, &s| gr.scaled_add(-s, &yr));
                acc!(*a, g);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let sums = dy.sum_axis(Axis(1));
                let mut g = dy.clone();
                Zip::from(g.rows_mut())
                    .and(y.rows())
                    .and(&sums)
                    .for_each(|mut gr, yr, &s| {
                        Zip::from(&mut gr).and(&yr).for_each(|g, &l| *g -= s * l.exp())
                    });
                acc!(*a, g);
            }
            Op::LayerNormRows(a) => {
                let xhat = &node.value;
                let inv = node.aux.as_ref().expect("layer norm aux");
                let n = xhat.ncols() as f64;
                let mut g = dy.clone();
                for (i, mut row) in g.rows_mut().into_iter().enumerate() {
                    let xr = xhat.row(i);
                    let mean_dy = row.sum() / n;
                    let mean_dyx = row.dot(&xr) / n;
                    let r = inv[[i, 0]];
                    Zip::from(&mut row)
                        .and(&xr)
                        .for_each(|g, &xh| *g = r * (*g - mean_dy - xh * mean_dyx));
                }
                acc!(*a, g);
            }
            Op::SumAll(a) => {
                let k = dy[[0, 0]];
                acc!(*a, Array2::from_elem(val(*a).dim(), k));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let k = dy[[0, 0]] / x.len() as f64;
                acc!(*a, Array2::from_elem(x.dim(), k));
            }
            Op::RowSums(a) => {
                let (m, n) = val(*a).dim();
                let g = Array2::from_shape_fn((m, n), |(i, _)| dy[[i, 0]]);
                acc!(*a, g);
            }
            Op::ColSums(a) => {
                let (m, n) = val(*a).dim();
                let g = Array2::from_shape_fn((m, n), |(_, j)| dy[[0, j]]);
                acc!(*a, g);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc!(p, dy.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut g = Array2::zeros(val(*a).dim());
                g.slice_mut(s![.., *start..*end]).assign(dy);
                acc!(*a, g);
            }
            Op::GatherRows(a, idx) => {
                let mut g = Array2::zeros(val(*a).dim());
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row += &dy.row(k);
                }
                acc!(*a, g);
            }
            Op::PickCols(a, cols) => {
                let mut g = Array2::zeros(val(*a).dim());
                for (i, &c) in cols.iter().enumerate() {
                    g[[i, c]] += dy[[i, 0]];
                }
                acc!(*a, g);
            }
            Op::Reshape(a) => {
                let dim = val(*a).dim();
                let flat: Vec<f64> = dy.iter().copied().collect();
                acc!(*a, Array2::from_shape_vec(dim, flat).expect("reshape grad"));
            }
            Op::SumRowGroups(a, group) => {
                let (m, n) = val(*a).dim();
                let g = Array2::from_shape_fn((m, n), |(i, j)| dy[[i / group, j]]);
                acc!(*a, g);
            }
            Op::GroupDots(a, c) => acc!(*a, group_pool(dy, c)),
            Op::GroupPool(w, c) => acc!(*w, group_dots(dy, c)),
        }
    }
}

fn group_dots(a: &Mat, c: &Mat) -> Mat {
    let (n, d) = a.dim();
    assert!(n > 0 && c.nrows() % n == 0 && c.ncols() == d, "group_dots shape mismatch");
    let x = c.nrows() / n;
    let mut out = Array2::zeros((n, x));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&c.slice(s![i * x..(i + 1) * x, ..]).dot(&a.row(i)));
    }
    out
}

fn group_pool(w: &Mat, c: &Mat) -> Mat {
    let (n, x) = w.dim();
    assert_eq!(c.nrows(), n * x, "group_pool shape mismatch");
    let mut out = Array2::zeros((n, c.ncols()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&c.slice(s![i * x..(i + 1) * x, ..]).t().dot(&w.row(i)));
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `0.5·x²` inside the knee, `beta·|x| − 0.5·beta²` outside.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x
    } else {
        beta * a - 0.5 * beta * beta
    }
}

fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x
    } else {
        beta * x.signum()
    }
}

/// Numerically stable row-wise softmax (max subtraction).
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    v
}
