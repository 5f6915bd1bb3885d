//! Reverse-mode differentiation on a flat tape.
//!
//! Every operation appends a node holding its forward value; [`Var`] is an
//! index into the tape. Node indices are a topological order, so
//! [`Tape::backward`] is a single reverse sweep.

mod check;
mod geometry;

use thiserror::Error;

use crate::tensor::Tensor;

pub use check::{finite_diff_check, finite_diff_check_coords, CoordCheck, FdReport};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite gradient produced by node {node} ({op})")]
    Numeric { node: usize, op: &'static str },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("finite-difference check invalid: {0}")]
    CheckInvalid(String),
    #[error("function evaluation failed: {0}")]
    Evaluation(String),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rules for non-differentiable forward operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StRule {
    /// Threshold on a membrane potential.
    Heaviside,
    /// Bernoulli draw (or a rate decoded from draws) on a probability.
    BernoulliSample,
}

impl StRule {
    pub fn from_tag(tag: &str) -> Result<Self, AutodiffError> {
        match tag {
            "heaviside" => Ok(Self::Heaviside),
            "bernoulli_sample" => Ok(Self::BernoulliSample),
            other => Err(AutodiffError::Config(format!(
                "no straight-through rule registered for `{other}`"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Heaviside => "heaviside",
            Self::BernoulliSample => "bernoulli_sample",
        }
    }
}

/// Looks up the straight-through rule registered under `tag`.
pub fn straight_through(tag: &str) -> Result<StRule, AutodiffError> {
    StRule::from_tag(tag)
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    RowwiseDot(Var, Var),
    MulCol(Var, Var),
    RowSum(Var),
    RowNormalize(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SoftmaxRows(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        rows: Vec<usize>,
    },
    StraightThrough(Var, StRule),
    Geometry(geometry::GeoOp),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::RowwiseDot(..) => "rowwise_dot",
            Op::MulCol(..) => "mul_col",
            Op::RowSum(..) => "row_sum",
            Op::RowNormalize(..) => "row_normalize",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::StraightThrough(_, rule) => rule.tag(),
            Op::Geometry(g) => g.name(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one backward sweep, keyed by [`Var`].
#[derive(Debug, Clone)]
pub struct GradientStore {
    grads: Vec<Option<Tensor>>,
}

impl GradientStore {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` does not influence the loss.
    pub fn wrt_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    /// Number of nodes holding a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    branches: Vec<bool>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Names of every differentiable operation a tape can record, including the
/// straight-through rules.
pub const DIFFERENTIABLE_OPS: [&str; 37] = [
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_scalar",
    "exp",
    "ln",
    "tanh",
    "sigmoid",
    "softplus",
    "relu",
    "clamp",
    "sum",
    "mean",
    "matmul",
    "add_row_bias",
    "concat_cols",
    "slice_cols",
    "gather_rows",
    "scatter_add_rows",
    "rowwise_dot",
    "mul_col",
    "row_sum",
    "row_normalize",
    "segment_softmax",
    "softmax_rows",
    "cross_entropy",
    "heaviside",
    "bernoulli_sample",
    "exp_origin",
    "log_origin",
    "exp_map",
    "log_map",
    "dist_sq",
    "project",
    "project_tangent",
];

/// Probability floor applied before the log in cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Which side of every piecewise boundary the forward pass landed on.
    pub fn branch_signature(&self) -> &[bool] {
        &self.branches
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Operation names of all non-leaf nodes, in recording order.
    pub fn op_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes
            .iter()
            .map(|n| n.op.name())
            .filter(|&name| name != "leaf")
    }

    pub(crate) fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let signs: Vec<bool> = self.value(a).data().iter().map(|&x| x > 0.0).collect();
        self.branches.extend(signs);
        self.push(Op::Relu(a), v)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp bounds reversed");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let sides: Vec<bool> = self
            .value(a)
            .data()
            .iter()
            .flat_map(|&x| [x < lo, x > hi])
            .collect();
        self.branches.extend(sides);
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(!t.is_empty(), "mean of an empty tensor");
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// Adds the `1 x c` row `b` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (xt, bt) = (self.value(x), self.value(b));
        assert_eq!(
            bt.shape(),
            (1, xt.cols()),
            "add_row_bias: bias must be 1 x cols"
        );
        let mut v = xt.clone();
        for r in 0..v.rows() {
            for (o, bi) in v.row_mut(r).iter_mut().zip(bt.data()) {
                *o += bi;
            }
        }
        self.push(Op::AddRowBias(x, b), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols: row counts differ");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start <= end && end <= t.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(t.rows(), end - start);
        for r in 0..t.rows() {
            v.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(idx.len(), t.cols());
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).copy_from_slice(t.row(i));
        }
        self.push(Op::GatherRows(a, idx.to_vec()), v)
    }

    /// `out[idx[k]] += a[k]` into an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "scatter_add_rows: index length");
        let mut v = Tensor::zeros(n_out, t.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in v.row_mut(i).iter_mut().zip(t.row(k)) {
                *o += x;
            }
        }
        self.push(Op::ScatterAddRows(a, idx.to_vec()), v)
    }

    /// Per-row dot products, `n x 1`.
    pub fn rowwise_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "rowwise_dot");
        let (at, bt) = (self.value(a), self.value(b));
        let data = (0..at.rows())
            .map(|r| crate::tensor::dot(at.row(r), bt.row(r)))
            .collect();
        let v = Tensor::from_vec(at.rows(), 1, data);
        self.push(Op::RowwiseDot(a, b), v)
    }

    /// Scales row `r` of `a` by `w[r]` for an `n x 1` column `w`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Var {
        let (at, wt) = (self.value(a), self.value(w));
        assert_eq!(
            wt.shape(),
            (at.rows(), 1),
            "mul_col: weight must be rows x 1"
        );
        let mut v = at.clone();
        for r in 0..v.rows() {
            let s = wt.get(r, 0);
            v.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        self.push(Op::MulCol(a, w), v)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let v = Tensor::from_vec(t.rows(), 1, data);
        self.push(Op::RowSum(a), v)
    }

    /// Divides each row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let s: f64 = v.row(r).iter().sum();
            v.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        self.push(Op::RowNormalize(a), v)
    }

    /// Softmax of an `E x 1` score column within groups given by `segment`.
    pub fn segment_softmax(&mut self, scores: Var, segment: &[usize]) -> Var {
        let t = self.value(scores);
        assert_eq!(
            t.shape(),
            (segment.len(), 1),
            "segment_softmax: scores must be E x 1"
        );
        let n_seg = segment.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&s, &e) in segment.iter().zip(t.data()) {
            max[s] = max[s].max(e);
        }
        let mut denom = vec![0.0; n_seg];
        let mut out: Vec<f64> = segment
            .iter()
            .zip(t.data())
            .map(|(&s, &e)| {
                let w = (e - max[s]).exp();
                denom[s] += w;
                w
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segment) {
            *o /= denom[s];
        }
        let v = Tensor::from_vec(segment.len(), 1, out);
        self.push(Op::SegmentSoftmax(scores, segment.to_vec()), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Mean of `-ln p[r, labels[r]]` over `rows`, with `p` floored at [`CE_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], rows: &[usize]) -> Var {
        let p = self.value(probs);
        assert_eq!(labels.len(), p.rows(), "cross_entropy: one label per row");
        assert!(!rows.is_empty(), "cross_entropy over an empty mask");
        let mut total = 0.0;
        let mut floored = Vec::with_capacity(rows.len());
        for &r in rows {
            let q = p.get(r, labels[r]);
            let hit = q < CE_FLOOR;
            if hit {
                log::warn!("true-class probability {q:e} at row {r} clamped to {CE_FLOOR:e}");
            }
            floored.push(hit);
            total -= q.max(CE_FLOOR).ln();
        }
        self.branches.extend(floored);
        let v = Tensor::scalar(total / rows.len() as f64);
        self.push(
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                rows: rows.to_vec(),
            },
            v,
        )
    }

    /// Records `forward` as a function of `input` whose gradient is the identity.
    pub fn straight_through(
        &mut self,
        input: Var,
        forward: Tensor,
        rule: StRule,
    ) -> Result<Var, AutodiffError> {
        if forward.shape() != self.shape(input) {
            return Err(AutodiffError::Shape(format!(
                "straight-through output {:?} does not match input {:?}",
                forward.shape(),
                self.shape(input)
            )));
        }
        Ok(self.push(Op::StraightThrough(input, rule), forward))
    }

    /// `1[u >= v_th]` with a straight-through gradient.
    pub fn heaviside(&mut self, u: Var, v_th: f64) -> Var {
        let t = self.value(u);
        let fired: Vec<bool> = t.data().iter().map(|&x| x >= v_th).collect();
        let v = Tensor::from_vec(
            t.rows(),
            t.cols(),
            fired.iter().map(|&f| f64::from(u8::from(f))).collect(),
        );
        self.branches.extend(fired);
        self.push(Op::StraightThrough(u, StRule::Heaviside), v)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradientStore, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let contributions = self.vjp(&node.op, &node.value, &g);
            grads[i] = Some(g);
            for (v, c) in contributions {
                if !c.is_finite() {
                    return Err(AutodiffError::Numeric {
                        node: i,
                        op: node.op.name(),
                    });
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(GradientStore { grads })
    }

    fn vjp(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scaled(-1.0))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |g, y| g * y)),
                (*b, g.zip_map(val(*a), |g, x| g * x)),
            ],
            Op::Neg(a) => vec![(*a, g.scaled(-1.0))],
            Op::Scale(a, s) => vec![(*a, g.scaled(*s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Exp(a) => vec![(*a, g.zip_map(out, |g, y| g * y))],
            Op::Ln(a) => vec![(*a, g.zip_map(val(*a), |g, x| g / x))],
            Op::Tanh(a) => vec![(*a, g.zip_map(out, |g, y| g * (1.0 - y * y)))],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |g, y| g * y * (1.0 - y)))],
            Op::Softplus(a) => vec![(*a, g.zip_map(val(*a), |g, x| g * sigmoid(x)))],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Clamp(a, lo, hi) => vec![(
                *a,
                g.zip_map(val(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g }),
            )],
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.item()))]
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.item() / (r * c) as f64))]
            }
            Op::MatMul(a, b) => vec![
                (*a, g.matmul(&val(*b).transpose())),
                (*b, val(*a).transpose().matmul(g)),
            ],
            Op::AddRowBias(x, b) => {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*x, g.clone()), (*b, gb)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let cols = val(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        (p, gp)
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let mut ga = Tensor::zeros(val(*a).rows(), val(*a).cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                vec![(*a, ga)]
            }
            Op::GatherRows(a, idx) => {
                let mut ga = Tensor::zeros(val(*a).rows(), val(*a).cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ScatterAddRows(a, idx) => {
                let mut ga = Tensor::zeros(idx.len(), g.cols());
                for (k, &i) in idx.iter().enumerate() {
                    ga.row_mut(k).copy_from_slice(g.row(i));
                }
                vec![(*a, ga)]
            }
            Op::RowwiseDot(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let mut ga = bt.clone();
                let mut gb = at.clone();
                for r in 0..g.rows() {
                    let s = g.get(r, 0);
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    gb.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::MulCol(a, w) => {
                let (at, wt) = (val(*a), val(*w));
                let mut ga = g.clone();
                let mut gw = Tensor::zeros(wt.rows(), 1);
                for r in 0..g.rows() {
                    let s = wt.get(r, 0);
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    gw.set(r, 0, crate::tensor::dot(g.row(r), at.row(r)));
                }
                vec![(*a, ga), (*w, gw)]
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let s = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|x| *x = s);
                }
                vec![(*a, ga)]
            }
            Op::RowNormalize(a) => {
                let at = val(*a);
                let mut ga = Tensor::zeros(at.rows(), at.cols());
                for r in 0..at.rows() {
                    let s: f64 = at.row(r).iter().sum();
                    let go = crate::tensor::dot(g.row(r), out.row(r));
                    for (o, gi) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                        *o = (gi - go) / s;
                    }
                }
                vec![(*a, ga)]
            }
            Op::SegmentSoftmax(a, segment) => {
                let n_seg = segment.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((&s, y), gi) in segment.iter().zip(out.data()).zip(g.data()) {
                    dot[s] += y * gi;
                }
                let data = segment
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&s, y), gi)| y * (gi - dot[s]))
                    .collect();
                vec![(*a, Tensor::from_vec(segment.len(), 1, data))]
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let d = crate::tensor::dot(g.row(r), out.row(r));
                    for ((o, y), gi) in ga.row_mut(r).iter_mut().zip(out.row(r)).zip(g.row(r)) {
                        *o = y * (gi - d);
                    }
                }
                vec![(*a, ga)]
            }
            Op::CrossEntropy {
                probs,
                labels,
                rows,
            } => {
                let p = val(*probs);
                let mut gp = Tensor::zeros(p.rows(), p.cols());
                let scale = g.item() / rows.len() as f64;
                for &r in rows {
                    let q = p.get(r, labels[r]);
                    if q >= CE_FLOOR {
                        let cur = gp.get(r, labels[r]);
                        gp.set(r, labels[r], cur - scale / q);
                    }
                }
                vec![(*probs, gp)]
            }
            Op::StraightThrough(a, _) => vec![(*a, g.clone())],
            Op::Geometry(geo) => geo.vjp(self, out, g),
        }
    }
}
