//! Minimal reverse-mode automatic differentiation over dense 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation as a node whose parents precede it, so
//! node order is already a topological order. [`Tape::backward`] walks the
//! nodes in reverse once and accumulates gradients into the leaves that were
//! created with `requires_grad`.
//!
//! ```
//! use ndarray::array;
//! use wbgrl_core::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[1.0, -2.0]]);
//! let y = tape.relu(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &array![[1.0, 0.0]]);
//! ```

mod adam;
pub mod gradcheck;

use std::rc::Rc;

use ndarray::{s, Array2, Axis};
use rand::Rng as _;

pub use adam::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    PRelu(Var, Var),
    Sigmoid(Var),
    MulConst(Var, Array2<f64>),
    RowCosine(Var, Var),
    SpMM(Rc<CsrMatrix>, Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SubstituteRows(Var, Var, Vec<usize>),
    WeightedMean(Var, Vec<f64>),
    Sum(Var),
    BceWithLogits(Var, Vec<f64>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Array2<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Array2<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name.to_owned()));
        }
        let requires_grad = parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a).dot(self.value(b));
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a) + self.value(bias);
        self.push("add_row_bias", value, Op::AddRowBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a) * c;
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Parametric ReLU with a learnable `1 × 1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(Error::Shape {
                op: "prelu",
                left: self.shape(a),
                right: self.shape(slope),
            });
        }
        let s = self.scalar(slope);
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { s * x });
        self.push("prelu", value, Op::PRelu(a, slope), &[a, slope])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// Inverted dropout: entries are zeroed with probability `p` and survivors
    /// scaled by `1 / (1 - p)`. `p = 0` returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Validation(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let (r, c) = self.shape(a);
        let mask = Array2::from_shape_simple_fn((r, c), || if rng.random::<f64>() < p { 0.0 } else { keep });
        self.mul_const(a, mask)
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Result<Var> {
        if shape(&c) != self.shape(a) {
            return Err(Error::Shape {
                op: "mul_const",
                left: self.shape(a),
                right: shape(&c),
            });
        }
        let value = self.value(a) * &c;
        self.push("mul_const", value, Op::MulConst(a, c), &[a])
    }

    /// Cosine similarity of matching rows, as an `n × 1` column. Rows with zero
    /// norm have similarity 0 and receive no gradient.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_cosine", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Array2::zeros((va.nrows(), 1));
        for (i, (ra, rb)) in va.rows().into_iter().zip(vb.rows()).enumerate() {
            let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
            if na > 0.0 && nb > 0.0 {
                out[[i, 0]] = ra.dot(&rb) / (na * nb);
            }
        }
        self.push("row_cosine", out, Op::RowCosine(a, b), &[a, b])
    }

    /// `adj · h` for a constant sparse matrix.
    pub fn sparse_matmul(&mut self, adj: Rc<CsrMatrix>, h: Var) -> Result<Var> {
        if adj.dim() != self.shape(h).0 {
            return Err(Error::Shape {
                op: "sparse_matmul",
                left: (adj.dim(), adj.dim()),
                right: self.shape(h),
            });
        }
        let value = adj.matmul(self.value(h));
        self.push("sparse_matmul", value, Op::SpMM(adj, h), &[h])
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Shape {
                op: "concat_rows",
                left: sa,
                right: sb,
            });
        }
        let value = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("column counts checked");
        self.push("concat_rows", value, Op::ConcatRows(a, b), &[a, b])
    }

    /// Places `b` to the right of `a`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::Shape {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        self.push("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start + len > sa.0 {
            return Err(Error::Shape {
                op: "slice_rows",
                left: sa,
                right: (start + len, sa.1),
            });
        }
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push("slice_rows", value, Op::SliceRows(a, start), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange { index: bad, size: n });
        }
        let value = self.value(a).select(Axis(0), &rows);
        self.push("gather_rows", value, Op::GatherRows(a, rows), &[a])
    }

    /// Copy of `h` whose listed rows are replaced by the `1 × d` row `unk`.
    pub fn substitute_rows(&mut self, h: Var, unk: Var, rows: Vec<usize>) -> Result<Var> {
        let (sh, su) = (self.shape(h), self.shape(unk));
        if su != (1, sh.1) {
            return Err(Error::Shape {
                op: "substitute_rows",
                left: sh,
                right: su,
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= sh.0) {
            return Err(Error::IndexOutOfRange { index: bad, size: sh.0 });
        }
        let mut value = self.value(h).clone();
        let unk_row = self.value(unk).row(0).to_owned();
        for &r in &rows {
            value.row_mut(r).assign(&unk_row);
        }
        self.push("substitute_rows", value, Op::SubstituteRows(h, unk, rows), &[h, unk])
    }

    /// `Σ wᵢ aᵢ / Σ wᵢ` over an `n × 1` column with constant positive weights.
    pub fn weighted_mean(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let sa = self.shape(a);
        if sa.1 != 1 || weights.len() != sa.0 {
            return Err(Error::Shape {
                op: "weighted_mean",
                left: sa,
                right: (weights.len(), 1),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Validation("weighted mean over empty or zero-weight set".into()));
        }
        let num: f64 = self.value(a).column(0).iter().zip(&weights).map(|(x, w)| x * w).sum();
        let value = Array2::from_elem((1, 1), num / total);
        self.push("weighted_mean", value, Op::WeightedMean(a, weights), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// `(1/M) Σ wⱼ · BCE(σ(zⱼ), yⱼ)` over an `M × 1` column of logits, computed
    /// in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let sl = self.shape(logits);
        if sl.1 != 1 || targets.len() != sl.0 || weights.len() != sl.0 {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: sl,
                right: (targets.len(), weights.len()),
            });
        }
        if sl.0 == 0 {
            return Err(Error::Validation("bce over an empty batch".into()));
        }
        let z = self.value(logits).column(0);
        let total: f64 = z
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&z, &y), &w)| w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()))
            .sum();
        let value = Array2::from_elem((1, 1), total / sl.0 as f64);
        self.push("bce_with_logits", value, Op::BceWithLogits(logits, targets, weights), &[logits])
    }

    /// Back-propagates from the scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let contributions = self.local_grads(id, &g);
            for (parent, pg) in contributions {
                if !self.needs(parent) {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                match &mut self.nodes[id].grad {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Array2<f64>) -> Vec<(Var, Array2<f64>)> {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.needs(*a) {
                    v.push((*a, g.dot(&self.value(*b).t())));
                }
                if self.needs(*b) {
                    v.push((*b, self.value(*a).t().dot(g)));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRowBias(a, bias) => {
                vec![(*a, g.clone()), (*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)))]
            }
            Op::Scale(a, c) => vec![(*a, g * *c)],
            Op::Relu(a) => {
                let mut ga = g.clone();
                ga.zip_mut_with(self.value(*a), |gi, &x| {
                    if x <= 0.0 {
                        *gi = 0.0
                    }
                });
                vec![(*a, ga)]
            }
            Op::PRelu(a, slope) => {
                let s = self.scalar(*slope);
                let x = self.value(*a);
                let mut ga = g.clone();
                let mut gs = 0.0;
                ndarray::Zip::from(&mut ga).and(x).for_each(|gi, &xi| {
                    if xi <= 0.0 {
                        gs += *gi * xi;
                        *gi *= s;
                    }
                });
                vec![(*a, ga), (*slope, Array2::from_elem((1, 1), gs))]
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                ga.zip_mut_with(out, |gi, &y| *gi *= y * (1.0 - y));
                vec![(*a, ga)]
            }
            Op::MulConst(a, c) => vec![(*a, g * c)],
            Op::RowCosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Array2::zeros(va.raw_dim());
                let mut gb = Array2::zeros(vb.raw_dim());
                for i in 0..va.nrows() {
                    let (ra, rb) = (va.row(i), vb.row(i));
                    let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = out[[i, 0]];
                    let gi = g[[i, 0]];
                    let inv = 1.0 / (na * nb);
                    // d cos / da = b/(|a||b|) - cos · a/|a|²
                    ga.row_mut(i).assign(&((&rb * inv - &ra * (c / (na * na))) * gi));
                    gb.row_mut(i).assign(&((&ra * inv - &rb * (c / (nb * nb))) * gi));
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SpMM(adj, h) => vec![(*h, adj.matmul_transposed(g))],
            Op::ConcatRows(a, b) => {
                let ra = self.shape(*a).0;
                vec![
                    (*a, g.slice(s![..ra, ..]).to_owned()),
                    (*b, g.slice(s![ra.., ..]).to_owned()),
                ]
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                vec![
                    (*a, g.slice(s![.., ..ca]).to_owned()),
                    (*b, g.slice(s![.., ca..]).to_owned()),
                ]
            }
            Op::SliceRows(a, start) => {
                let mut ga = Array2::zeros(self.value(*a).raw_dim());
                ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                vec![(*a, ga)]
            }
            Op::GatherRows(a, rows) => {
                let mut ga = Array2::zeros(self.value(*a).raw_dim());
                for (k, &r) in rows.iter().enumerate() {
                    ga.row_mut(r).scaled_add(1.0, &g.row(k));
                }
                vec![(*a, ga)]
            }
            Op::SubstituteRows(h, unk, rows) => {
                let mut gh = g.clone();
                let mut gu = Array2::zeros((1, g.ncols()));
                let mut replaced = vec![false; g.nrows()];
                for &r in rows {
                    replaced[r] = true;
                }
                for (r, hit) in replaced.into_iter().enumerate() {
                    if hit {
                        gu.row_mut(0).scaled_add(1.0, &g.row(r));
                        gh.row_mut(r).fill(0.0);
                    }
                }
                vec![(*h, gh), (*unk, gu)]
            }
            Op::WeightedMean(a, w) => {
                let total: f64 = w.iter().sum();
                let scale = g[[0, 0]] / total;
                let ga = Array2::from_shape_fn((w.len(), 1), |(i, _)| w[i] * scale);
                vec![(*a, ga)]
            }
            Op::Sum(a) => vec![(*a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]))],
            Op::BceWithLogits(z, y, w) => {
                let m = y.len() as f64;
                let scale = g[[0, 0]] / m;
                let zv = self.value(*z);
                let gz = Array2::from_shape_fn((y.len(), 1), |(i, _)| w[i] * (sigmoid(zv[[i, 0]]) - y[i]) * scale);
                vec![(*z, gz)]
            }
        }
    }
}
