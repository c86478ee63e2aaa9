//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is a define-then-run tape: nodes are appended in topological
//! order, leaves are bound to values (immediately or later through
//! [`Graph::bind`]) and [`Graph::evaluate`] fills the value cache lazily.
//!
//! Two reverse passes are provided:
//!
//! * [`Graph::gradient`] computes numeric adjoints of a scalar root, touching
//!   only nodes that lie on a path between the root and the requested leaves.
//! * [`Graph::gradient_nodes`] appends the adjoint computation to the tape as
//!   ordinary nodes. The result is itself differentiable, which is what a
//!   gradient penalty needs: the penalty is a function of `∇ₓ f`, and its
//!   parameter gradient is a second reverse pass over the extended tape.
//!
//! Every op's vector-Jacobian product is expressed with ops from the same set,
//! so the op set is closed under differentiation. The ReLU derivative is the
//! `Step` op, taken as 0 at exactly 0; `Step` itself has derivative 0.

use ndarray::{concatenate, s, Array2, Axis, Zip};
use thiserror::Error;

/// Dense row-major matrix. Scalars are `1×1`, batches are `rows = samples`.
pub type Tensor = Array2<f64>;

pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("leaf node {0} has no bound value")]
    UnboundLeaf(usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("root must be scalar (1x1), got {0:?}")]
    NonScalarRoot(Shape),
    #[error("node {0} does not exist in this graph")]
    UnknownNode(usize),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable parameter.
    Parameter,
    /// Data, constants and anything else bound from outside.
    Input,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf(LeafKind),
    /// `op(lhs) · op(rhs)` where `op` optionally transposes.
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
        lhs_t: bool,
        rhs_t: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `n×k + 1×k`, the row vector added to every row.
    AddRow(NodeId, NodeId),
    /// `1×k → n×k`.
    BroadcastRows(NodeId, usize),
    /// `n×1 → n×k`.
    BroadcastCols(NodeId, usize),
    /// `n×k → 1×k`.
    SumRows(NodeId),
    /// `n×k → n×1`.
    SumCols(NodeId),
    /// `n×k` times `n×1`, row `i` scaled by entry `i`.
    ScaleRows(NodeId, NodeId),
    Relu(NodeId),
    /// Heaviside indicator of `x > 0`.
    Step(NodeId),
    Mul(NodeId, NodeId),
    Affine {
        arg: NodeId,
        scale: f64,
        shift: f64,
    },
    Square(NodeId),
    Recip(NodeId),
    /// Per-row `sqrt(Σⱼ xᵢⱼ² + eps)`, shape `n×1`.
    RowNorm {
        arg: NodeId,
        eps: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    /// `1×1 → rows×cols`.
    Fill {
        arg: NodeId,
        rows: usize,
        cols: usize,
    },
    ConcatCols(NodeId, NodeId),
    SliceCols {
        arg: NodeId,
        start: usize,
        len: usize,
    },
    /// Embeds `arg` at column `start` of a zero matrix with `total` columns.
    PadCols {
        arg: NodeId,
        start: usize,
        total: usize,
    },
}

impl Op {
    fn parents(&self) -> ParentIter {
        use Op::*;
        let (a, b) = match *self {
            Leaf(_) => (None, None),
            MatMul { lhs, rhs, .. } => (Some(lhs), Some(rhs)),
            Add(x, y) | Sub(x, y) | AddRow(x, y) | ScaleRows(x, y) | Mul(x, y) | ConcatCols(x, y) => {
                (Some(x), Some(y))
            }
            BroadcastRows(x, _) | BroadcastCols(x, _) | SumRows(x) | SumCols(x) | Relu(x)
            | Step(x) | Square(x) | Recip(x) | Sum(x) | Mean(x) => (Some(x), None),
            Affine { arg, .. }
            | RowNorm { arg, .. }
            | Fill { arg, .. }
            | SliceCols { arg, .. }
            | PadCols { arg, .. } => (Some(arg), None),
        };
        ParentIter { a, b }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf(_) => "leaf",
            MatMul { .. } => "matmul",
            Add(..) => "add",
            Sub(..) => "sub",
            AddRow(..) => "add_row",
            BroadcastRows(..) => "broadcast_rows",
            BroadcastCols(..) => "broadcast_cols",
            SumRows(_) => "sum_rows",
            SumCols(_) => "sum_cols",
            ScaleRows(..) => "scale_rows",
            Relu(_) => "relu",
            Step(_) => "step",
            Mul(..) => "mul",
            Affine { .. } => "affine",
            Square(_) => "square",
            Recip(_) => "recip",
            RowNorm { .. } => "row_norm",
            Sum(_) => "sum",
            Mean(_) => "mean",
            Fill { .. } => "fill",
            ConcatCols(..) => "concat_cols",
            SliceCols { .. } => "slice_cols",
            PadCols { .. } => "pad_cols",
        }
    }
}

struct ParentIter {
    a: Option<NodeId>,
    b: Option<NodeId>,
}

impl Iterator for ParentIter {
    type Item = NodeId;
    fn next(&mut self) -> Option<NodeId> {
        self.a.take().or_else(|| self.b.take())
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
    value: Option<Tensor>,
}

/// Per-leaf gradients, in the order the leaves were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensors: Vec<Tensor>,
}

impl Gradient {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    /// Checks that every tensor has the shape of the matching parameter.
    pub fn is_congruent<'a>(&self, params: impl IntoIterator<Item = &'a Tensor>) -> bool {
        let mut n = 0;
        for (g, p) in self.tensors.iter().zip(params) {
            if g.dim() != p.dim() {
                return false;
            }
            n += 1;
        }
        n == self.tensors.len()
    }
}

impl std::ops::Index<usize> for Gradient {
    type Output = Tensor;
    fn index(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }
}

/// Expression DAG with cached values. Nodes are stored in creation order,
/// which is always a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: Shape, rhs: Shape) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs, rhs }
}

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

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Cached value, if the node has been evaluated (or is a bound leaf).
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    /// Scalar value of a `1×1` node that has been evaluated.
    pub fn scalar(&self, id: NodeId) -> Option<f64> {
        self.value(id).filter(|v| v.dim() == (1, 1)).map(|v| v[[0, 0]])
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownNode(id.0))
        }
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.nodes.push(Node {
            op,
            shape,
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    // ---- leaves ----------------------------------------------------------

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.leaf(LeafKind::Parameter, value)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.leaf(LeafKind::Input, value)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, fill: f64) -> NodeId {
        self.input(Array2::from_elem((rows, cols), fill))
    }

    fn leaf(&mut self, kind: LeafKind, value: Tensor) -> NodeId {
        let shape = value.dim();
        let id = self.push(Op::Leaf(kind), shape);
        self.nodes[id.0].value = Some(value);
        id
    }

    /// Declares a leaf of known shape whose value is supplied later.
    pub fn placeholder(&mut self, kind: LeafKind, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Leaf(kind), (rows, cols))
    }

    /// Binds a new value to a leaf and drops every cached non-leaf value that
    /// could depend on it.
    pub fn bind(&mut self, leaf: NodeId, value: Tensor) -> Result<()> {
        self.check(leaf)?;
        let node = &self.nodes[leaf.0];
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(AutodiffError::NotALeaf(leaf.0));
        }
        if node.shape != value.dim() {
            return Err(mismatch("bind", node.shape, value.dim()));
        }
        self.nodes[leaf.0].value = Some(value);
        for node in &mut self.nodes[leaf.0 + 1..] {
            if !matches!(node.op, Op::Leaf(_)) {
                node.value = None;
            }
        }
        Ok(())
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf(_))
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    // ---- op builders -----------------------------------------------------

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.matmul_t(lhs, rhs, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, lhs: NodeId, rhs: NodeId, lhs_t: bool, rhs_t: bool) -> Result<NodeId> {
        self.check(lhs)?;
        self.check(rhs)?;
        let t = |s: Shape, flag: bool| if flag { (s.1, s.0) } else { s };
        let a = t(self.shape(lhs), lhs_t);
        let b = t(self.shape(rhs), rhs_t);
        if a.1 != b.0 {
            return Err(mismatch("matmul", a, b));
        }
        Ok(self.push(
            Op::MatMul {
                lhs,
                rhs,
                lhs_t,
                rhs_t,
            },
            (a.0, b.1),
        ))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(row)?;
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(mismatch("add_row", sa, sr));
        }
        Ok(self.push(Op::AddRow(a, row), sa))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        if s.0 != 1 {
            return Err(mismatch("broadcast_rows", s, (1, s.1)));
        }
        Ok(self.push(Op::BroadcastRows(a, rows), (rows, s.1)))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        if s.1 != 1 {
            return Err(mismatch("broadcast_cols", s, (s.0, 1)));
        }
        Ok(self.push(Op::BroadcastCols(a, cols), (s.0, cols)))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        Ok(self.push(Op::SumRows(a), (1, s.1)))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        Ok(self.push(Op::SumCols(a), (s.0, 1)))
    }

    pub fn scale_rows(&mut self, a: NodeId, scale: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(scale)?;
        let (sa, ss) = (self.shape(a), self.shape(scale));
        if ss != (sa.0, 1) {
            return Err(mismatch("scale_rows", sa, ss));
        }
        Ok(self.push(Op::ScaleRows(a, scale), sa))
    }

    fn unary(&mut self, a: NodeId, op: Op) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        Ok(self.push(op, s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a))
    }

    pub fn step(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Step(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Recip(a))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.unary(
            a,
            Op::Affine {
                arg: a,
                scale,
                shift,
            },
        )
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        self.affine(a, scale, 0.0)
    }

    pub fn row_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        Ok(self.push(Op::RowNorm { arg: a, eps }, (s.0, 1)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        Ok(self.push(Op::Sum(a), (1, 1)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        Ok(self.push(Op::Mean(a), (1, 1)))
    }

    pub fn fill(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        if s != (1, 1) {
            return Err(mismatch("fill", s, (1, 1)));
        }
        Ok(self.push(Op::Fill { arg: a, rows, cols }, (rows, cols)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(mismatch("concat_cols", sa, sb));
        }
        Ok(self.push(Op::ConcatCols(a, b), (sa.0, sa.1 + sb.1)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        if start + len > s.1 {
            return Err(mismatch("slice_cols", s, (s.0, start + len)));
        }
        Ok(self.push(Op::SliceCols { arg: a, start, len }, (s.0, len)))
    }

    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId> {
        self.check(a)?;
        let s = self.shape(a);
        if start + s.1 > total {
            return Err(mismatch("pad_cols", s, (s.0, total)));
        }
        Ok(self.push(Op::PadCols { arg: a, start, total }, (s.0, total)))
    }

    // ---- evaluation ------------------------------------------------------

    /// Marks every ancestor of `root` (including `root`).
    fn ancestors(&self, root: NodeId) -> Vec<bool> {
        let mut mark = vec![false; root.0 + 1];
        mark[root.0] = true;
        for i in (0..=root.0).rev() {
            if mark[i] {
                for p in self.nodes[i].op.parents() {
                    mark[p.0] = true;
                }
            }
        }
        mark
    }

    /// Evaluates `root` and caches every intermediate value it depends on.
    pub fn evaluate(&mut self, root: NodeId) -> Result<&Tensor> {
        self.check(root)?;
        let mark = self.ancestors(root);
        for i in 0..=root.0 {
            if !mark[i] || self.nodes[i].value.is_some() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf(_)) {
                return Err(AutodiffError::UnboundLeaf(i));
            }
            let v = self.compute(i);
            self.nodes[i].value = Some(v);
        }
        Ok(self.nodes[root.0].value.as_ref().expect("root evaluated"))
    }

    /// Binds `inputs` then evaluates `root`.
    pub fn evaluate_with(&mut self, root: NodeId, inputs: &[(NodeId, Tensor)]) -> Result<&Tensor> {
        for (leaf, value) in inputs {
            self.bind(*leaf, value.clone())?;
        }
        self.evaluate(root)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parent evaluated before child")
    }

    fn compute(&self, i: usize) -> Tensor {
        use Op::*;
        match self.nodes[i].op {
            Leaf(_) => unreachable!("leaves are bound, not computed"),
            MatMul {
                lhs,
                rhs,
                lhs_t,
                rhs_t,
            } => {
                let (a, b) = (self.val(lhs), self.val(rhs));
                match (lhs_t, rhs_t) {
                    (false, false) => a.dot(b),
                    (true, false) => a.t().dot(b),
                    (false, true) => a.dot(&b.t()),
                    (true, true) => a.t().dot(&b.t()),
                }
            }
            Add(a, b) => self.val(a) + self.val(b),
            Sub(a, b) => self.val(a) - self.val(b),
            AddRow(a, r) => self.val(a) + self.val(r),
            BroadcastRows(a, rows) => {
                let v = self.val(a);
                v.broadcast((rows, v.ncols())).expect("row vector").to_owned()
            }
            BroadcastCols(a, cols) => {
                let v = self.val(a);
                v.broadcast((v.nrows(), cols)).expect("column vector").to_owned()
            }
            SumRows(a) => self.val(a).sum_axis(Axis(0)).insert_axis(Axis(0)),
            SumCols(a) => self.val(a).sum_axis(Axis(1)).insert_axis(Axis(1)),
            ScaleRows(a, s) => self.val(a) * self.val(s),
            Relu(a) => self.val(a).mapv(|x| x.max(0.0)),
            Step(a) => self.val(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Mul(a, b) => self.val(a) * self.val(b),
            Affine { arg, scale, shift } => self.val(arg).mapv(|x| scale * x + shift),
            Square(a) => self.val(a).mapv(|x| x * x),
            Recip(a) => self.val(a).mapv(|x| 1.0 / x),
            RowNorm { arg, eps } => {
                let v = self.val(arg);
                v.map_axis(Axis(1), |row| (row.dot(&row) + eps).sqrt())
                    .insert_axis(Axis(1))
            }
            Sum(a) => Array2::from_elem((1, 1), self.val(a).sum()),
            Mean(a) => {
                let v = self.val(a);
                Array2::from_elem((1, 1), v.sum() / v.len() as f64)
            }
            Fill { arg, rows, cols } => Array2::from_elem((rows, cols), self.val(arg)[[0, 0]]),
            ConcatCols(a, b) => concatenate![Axis(1), *self.val(a), *self.val(b)],
            SliceCols { arg, start, len } => self.val(arg).slice(s![.., start..start + len]).to_owned(),
            PadCols { arg, start, total } => {
                let v = self.val(arg);
                let mut out = Array2::zeros((v.nrows(), total));
                out.slice_mut(s![.., start..start + v.ncols()]).assign(v);
                out
            }
        }
    }

    /// Nodes on some path from a `wrt` leaf to `root`.
    fn on_path(&self, root: NodeId, wrt: &[NodeId]) -> Vec<bool> {
        let n = root.0 + 1;
        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].op.parents().any(|p| depends[p.0]) {
                depends[i] = true;
            }
        }
        let anc = self.ancestors(root);
        depends.iter().zip(&anc).map(|(d, a)| *d && *a).collect()
    }

    fn scalar_root(&mut self, root: NodeId) -> Result<()> {
        self.check(root)?;
        let s = self.shape(root);
        if s != (1, 1) {
            return Err(AutodiffError::NonScalarRoot(s));
        }
        Ok(())
    }

    /// Numeric reverse pass: `∂root/∂w` for every `w` in `wrt`.
    pub fn gradient(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Gradient> {
        self.scalar_root(root)?;
        for w in wrt {
            self.check(*w)?;
        }
        self.evaluate(root)?;
        let live = self.on_path(root, wrt);
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            if !live[i] || matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            for (parent, contrib) in self.vjp_numeric(i, &g) {
                if !live[parent.0] {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let tensors = wrt
            .iter()
            .map(|w| {
                adj.get(w.0)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| Array2::zeros(self.shape(*w)))
            })
            .collect();
        Ok(Gradient { tensors })
    }

    fn vjp_numeric(&self, i: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        use Op::*;
        let out = || self.val(NodeId(i));
        match self.nodes[i].op {
            Leaf(_) | Step(_) => vec![],
            MatMul {
                lhs,
                rhs,
                lhs_t,
                rhs_t,
            } => {
                let (a, b) = (self.val(lhs), self.val(rhs));
                // op(B) and op(A) as views
                let opb = if rhs_t { b.t() } else { b.view() };
                let opa = if lhs_t { a.t() } else { a.view() };
                let da = if lhs_t { opb.dot(&g.t()) } else { g.dot(&opb.t()) };
                let db = if rhs_t { g.t().dot(&opa) } else { opa.t().dot(g) };
                vec![(lhs, da), (rhs, db)]
            }
            Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Sub(a, b) => vec![(a, g.clone()), (b, -g)],
            AddRow(a, r) => vec![(a, g.clone()), (r, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            BroadcastRows(a, _) => vec![(a, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            BroadcastCols(a, _) => vec![(a, g.sum_axis(Axis(1)).insert_axis(Axis(1)))],
            SumRows(a) => {
                let rows = self.shape(a).0;
                vec![(a, g.broadcast((rows, g.ncols())).unwrap().to_owned())]
            }
            SumCols(a) => {
                let cols = self.shape(a).1;
                vec![(a, g.broadcast((g.nrows(), cols)).unwrap().to_owned())]
            }
            ScaleRows(a, sc) => {
                let (va, vs) = (self.val(a), self.val(sc));
                let ds = (g * va).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(a, g * vs), (sc, ds)]
            }
            Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![(a, d)]
            }
            Mul(a, b) => vec![(a, g * self.val(b)), (b, g * self.val(a))],
            Affine { arg, scale, .. } => vec![(arg, g * scale)],
            Square(a) => vec![(a, g * &self.val(a).mapv(|x| 2.0 * x))],
            Recip(a) => vec![(a, -(g * &out().mapv(|y| y * y)))],
            RowNorm { arg, .. } => {
                let ratio = g / out();
                vec![(arg, self.val(arg) * &ratio)]
            }
            Sum(a) => {
                let s = self.shape(a);
                vec![(a, Array2::from_elem(s, g[[0, 0]]))]
            }
            Mean(a) => {
                let s = self.shape(a);
                vec![(a, Array2::from_elem(s, g[[0, 0]] / (s.0 * s.1) as f64))]
            }
            Fill { arg, .. } => vec![(arg, Array2::from_elem((1, 1), g.sum()))],
            ConcatCols(a, b) => {
                let ka = self.shape(a).1;
                vec![
                    (a, g.slice(s![.., ..ka]).to_owned()),
                    (b, g.slice(s![.., ka..]).to_owned()),
                ]
            }
            SliceCols { arg, start, len } => {
                let mut d = Array2::zeros(self.shape(arg));
                d.slice_mut(s![.., start..start + len]).assign(g);
                vec![(arg, d)]
            }
            PadCols { arg, start, .. } => {
                let len = self.shape(arg).1;
                vec![(arg, g.slice(s![.., start..start + len]).to_owned())]
            }
        }
    }

    /// Symbolic reverse pass. Appends nodes computing `∂root/∂w` for every
    /// `w` in `wrt` and returns their ids. The new nodes are differentiable
    /// like any other, so a scalar function of them can be passed back into
    /// [`Graph::gradient`].
    pub fn gradient_nodes(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.scalar_root(root)?;
        for w in wrt {
            self.check(*w)?;
        }
        let live = self.on_path(root, wrt);
        let mut adj: Vec<Option<NodeId>> = vec![None; root.0 + 1];
        adj[root.0] = Some(self.constant(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            if !live[i] || matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            for (parent, contrib) in self.vjp_symbolic(i, g)? {
                if !live[parent.0] {
                    continue;
                }
                adj[parent.0] = Some(match adj[parent.0] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(id) => Ok(id),
                None => {
                    let (r, c) = self.shape(*w);
                    Ok(self.constant(r, c, 0.0))
                }
            })
            .collect()
    }

    fn vjp_symbolic(&mut self, i: usize, g: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let me = NodeId(i);
        let op = self.nodes[i].op.clone();
        Ok(match op {
            Leaf(_) | Step(_) => vec![],
            MatMul {
                lhs,
                rhs,
                lhs_t,
                rhs_t,
            } => {
                let da = if lhs_t {
                    self.matmul_t(rhs, g, rhs_t, true)?
                } else {
                    self.matmul_t(g, rhs, false, !rhs_t)?
                };
                let db = if rhs_t {
                    self.matmul_t(g, lhs, true, lhs_t)?
                } else {
                    self.matmul_t(lhs, g, !lhs_t, false)?
                };
                vec![(lhs, da), (rhs, db)]
            }
            Add(a, b) => vec![(a, g), (b, g)],
            Sub(a, b) => {
                let nb = self.scale(g, -1.0)?;
                vec![(a, g), (b, nb)]
            }
            AddRow(a, r) => {
                let dr = self.sum_rows(g)?;
                vec![(a, g), (r, dr)]
            }
            BroadcastRows(a, _) => vec![(a, self.sum_rows(g)?)],
            BroadcastCols(a, _) => vec![(a, self.sum_cols(g)?)],
            SumRows(a) => {
                let rows = self.shape(a).0;
                vec![(a, self.broadcast_rows(g, rows)?)]
            }
            SumCols(a) => {
                let cols = self.shape(a).1;
                vec![(a, self.broadcast_cols(g, cols)?)]
            }
            ScaleRows(a, sc) => {
                let da = self.scale_rows(g, sc)?;
                let ga = self.mul(g, a)?;
                let ds = self.sum_cols(ga)?;
                vec![(a, da), (sc, ds)]
            }
            Relu(a) => {
                let mask = self.step(a)?;
                vec![(a, self.mul(g, mask)?)]
            }
            Mul(a, b) => {
                let da = self.mul(g, b)?;
                let db = self.mul(g, a)?;
                vec![(a, da), (b, db)]
            }
            Affine { arg, scale, .. } => vec![(arg, self.scale(g, scale)?)],
            Square(a) => {
                let two_a = self.scale(a, 2.0)?;
                vec![(a, self.mul(g, two_a)?)]
            }
            Recip(a) => {
                let sq = self.square(me)?;
                let neg = self.scale(sq, -1.0)?;
                vec![(a, self.mul(g, neg)?)]
            }
            RowNorm { arg, .. } => {
                let inv = self.recip(me)?;
                let ratio = self.mul(g, inv)?;
                vec![(arg, self.scale_rows(arg, ratio)?)]
            }
            Sum(a) => {
                let (r, c) = self.shape(a);
                vec![(a, self.fill(g, r, c)?)]
            }
            Mean(a) => {
                let (r, c) = self.shape(a);
                let filled = self.fill(g, r, c)?;
                vec![(a, self.scale(filled, 1.0 / (r * c) as f64)?)]
            }
            Fill { arg, .. } => vec![(arg, self.sum(g)?)],
            ConcatCols(a, b) => {
                let (ka, kb) = (self.shape(a).1, self.shape(b).1);
                let da = self.slice_cols(g, 0, ka)?;
                let db = self.slice_cols(g, ka, kb)?;
                vec![(a, da), (b, db)]
            }
            SliceCols { arg, start, .. } => {
                let total = self.shape(arg).1;
                vec![(arg, self.pad_cols(g, start, total)?)]
            }
            PadCols { arg, start, .. } => {
                let len = self.shape(arg).1;
                vec![(arg, self.slice_cols(g, start, len)?)]
            }
        })
    }

    /// True when every parent index precedes its child.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.parents().all(|p| p.0 < i))
    }

    /// Recomputes every cached non-leaf value from its parents and returns
    /// the largest absolute deviation from the cache.
    pub fn max_recompute_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf(_)) {
                continue;
            }
            let Some(cached) = &node.value else { continue };
            if node.op.parents().any(|p| self.nodes[p.0].value.is_none()) {
                continue;
            }
            let fresh = self.compute(i);
            for (a, b) in fresh.iter().zip(cached.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// Human-readable op name, for diagnostics.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}
