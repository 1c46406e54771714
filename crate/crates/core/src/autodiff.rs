//! Reverse-mode automatic differentiation over a scalar tape.
//!
//! Every differentiable routine in the crate is written once against the
//! [`Real`] trait and runs either on plain `f64` (inference, validation,
//! baselines) or on [`Var`], which records each operation on a [`Tape`].
//! A reverse sweep over the tape then yields gradients for every leaf and,
//! for dense layers, for the model parameters they read.
//!
//! Dense layers are recorded as a single block rather than one node per
//! multiply-add; everything else is a scalar node with its local partials.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use smallvec::{smallvec, SmallVec};

use crate::linalg;

type Partials = SmallVec<[f64; 4]>;

/// Node id used for constants. Constants never occupy a tape slot.
const CONST: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("division by zero at node {node}")]
    DivisionByZero { node: u32 },
    #[error("square root of negative value {value} at node {node}")]
    NegativeSqrt { node: u32, value: f64 },
    #[error("singular linear system at node {node}")]
    Singular { node: u32 },
    #[error("operation {op:?} expects {expected} inputs, got {got}")]
    Arity { op: Op, expected: usize, got: usize },
    #[error("inputs recorded on different tapes")]
    ForeignTape,
    #[error("root value is not a scalar on this tape")]
    BadRoot,
}

/// Elementary operations accepted by [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `a^b` for variable base and exponent.
    Pow,
    Neg,
    Sqrt,
    Tan,
    Atan,
    Atan2,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Exp,
    Max,
    Min,
    Abs,
    /// Euclidean norm of all inputs.
    Norm,
}

impl Op {
    fn arity(self) -> Option<usize> {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow | Op::Atan2 | Op::Max | Op::Min => {
                Some(2)
            }
            Op::Norm => None,
            _ => Some(1),
        }
    }
}

/// Activation applied at the output of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Location of one fully connected layer inside a flat parameter vector.
///
/// Weights are stored row-major as `[n_out][n_in]`, followed elsewhere by
/// `n_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenseLayer {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    pub fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.n_in);
        out.clear();
        let w = &params[self.weight_offset..self.weight_offset + self.n_in * self.n_out];
        let b = &params[self.bias_offset..self.bias_offset + self.n_out];
        for (row, bias) in w.chunks_exact(self.n_in).zip(b) {
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias;
            out.push(self.activation.apply(z));
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Leaf,
    Op(Op),
    /// Opaque node with caller-supplied partials; replay keeps its value.
    Custom,
    /// Component `k` of a 6x6 linear solve whose 42 operands are the edges.
    Solve(u8),
    /// First output of a dense block; owns the block's backward pass.
    Dense(u32),
    /// Remaining outputs of a dense block.
    DenseOut,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: Kind,
    value: f64,
    edges: (u32, u32),
}

/// Operand reference. For constant operands `partial` holds the constant
/// value (needed for replay) and the edge is skipped in the reverse sweep.
#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layer: DenseLayer,
    inputs: Vec<u32>,
    input_values: Vec<f64>,
    out_start: u32,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    blocks: Vec<DenseBlock>,
    error: Option<DiffError>,
}

/// Append-only record of operations. Not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// A differentiable scalar: a value plus its node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.id == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.id, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.id == CONST
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<f64>,
    params: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.id == CONST {
            0.0
        } else {
            self.nodes[v.id as usize]
        }
    }

    /// Gradient with respect to the flat parameter vector passed to
    /// [`Tape::backward_with_params`]. Empty when no parameters were given.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        let e = inner.edges.len() as u32;
        inner.nodes.push(Node { kind: Kind::Leaf, value, edges: (e, e) });
        Var { tape: self, id, val: value }
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        Var { tape: self, id: CONST, val: value }
    }

    /// First error raised by an invalid operation recorded through the
    /// operator overloads, if any.
    pub fn error(&self) -> Option<DiffError> {
        self.inner.borrow().error.clone()
    }

    fn poison(&self, err: DiffError) {
        let mut inner = self.inner.borrow_mut();
        if inner.error.is_none() {
            inner.error = Some(err);
        }
    }

    fn next_id(&self) -> u32 {
        self.inner.borrow().nodes.len() as u32
    }

    fn push(&self, kind: Kind, value: f64, edges: &[Edge]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        let start = inner.edges.len() as u32;
        inner.edges.extend_from_slice(edges);
        let end = inner.edges.len() as u32;
        inner.nodes.push(Node { kind, value, edges: (start, end) });
        Var { tape: self, id, val: value }
    }

    fn check_same(&self, inputs: &[Var<'_>]) -> Result<(), DiffError> {
        if inputs.iter().all(|v| std::ptr::eq(v.tape, self)) {
            Ok(())
        } else {
            Err(DiffError::ForeignTape)
        }
    }

    /// Records `op` applied to `inputs` and returns the result.
    pub fn record<'t>(&'t self, op: Op, inputs: &[Var<'t>]) -> Result<Var<'t>, DiffError> {
        self.check_same(inputs)?;
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(DiffError::Arity { op, expected: n, got: inputs.len() });
            }
        }
        let node = self.next_id();
        match op {
            Op::Div if inputs[1].val == 0.0 => return Err(DiffError::DivisionByZero { node }),
            Op::Sqrt if inputs[0].val < 0.0 => {
                return Err(DiffError::NegativeSqrt { node, value: inputs[0].val })
            }
            _ => {}
        }
        Ok(self.apply(op, inputs))
    }

    /// Records without validation; invalid inputs poison the tape.
    fn apply<'t>(&'t self, op: Op, inputs: &[Var<'t>]) -> Var<'t> {
        let vals: Partials = inputs.iter().map(|v| v.val).collect();
        let (value, partials) = eval_op(op, &vals);
        match op {
            Op::Div if vals[1] == 0.0 => {
                self.poison(DiffError::DivisionByZero { node: self.next_id() })
            }
            Op::Sqrt if vals[0] < 0.0 => {
                self.poison(DiffError::NegativeSqrt { node: self.next_id(), value: vals[0] })
            }
            _ => {}
        }
        if inputs.iter().all(|v| v.id == CONST) {
            return self.constant(value);
        }
        let edges: SmallVec<[Edge; 4]> = inputs
            .iter()
            .zip(&partials)
            .map(|(v, &p)| {
                if v.id == CONST {
                    Edge { parent: CONST, partial: v.val }
                } else {
                    Edge { parent: v.id, partial: p }
                }
            })
            .collect();
        self.push(Kind::Op(op), value, &edges)
    }

    /// Records a node whose value and local partials were computed by the
    /// caller.
    pub fn custom<'t>(&'t self, value: f64, partials: &[(Var<'t>, f64)]) -> Var<'t> {
        let edges: SmallVec<[Edge; 8]> = partials
            .iter()
            .filter(|(v, _)| v.id != CONST)
            .map(|(v, p)| Edge { parent: v.id, partial: *p })
            .collect();
        if edges.is_empty() {
            return self.constant(value);
        }
        self.push(Kind::Custom, value, &edges)
    }

    /// Solves the 6x6 system `a x = b`. Each output records the adjoint
    /// rule through explicit partials: dx_i/db_k = inv(a)_ik and
    /// dx_i/da_kl = -inv(a)_ik x_l.
    pub fn solve6<'t>(
        &'t self,
        a: &[[Var<'t>; 6]; 6],
        b: &[Var<'t>; 6],
    ) -> Result<[Var<'t>; 6], DiffError> {
        let av = a.map(|row| row.map(|v| v.val));
        let bv = b.map(|v| v.val);
        let node = self.next_id();
        let lu = linalg::Lu6::factor(&av).ok_or(DiffError::Singular { node })?;
        let x = lu.solve(&bv);
        let inv = lu.inverse();
        let mut out = [self.constant(0.0); 6];
        for i in 0..6 {
            let mut edges = Vec::with_capacity(42);
            for k in 0..6 {
                for l in 0..6 {
                    let v = a[k][l];
                    edges.push(if v.id == CONST {
                        Edge { parent: CONST, partial: v.val }
                    } else {
                        Edge { parent: v.id, partial: -inv[i][k] * x[l] }
                    });
                }
            }
            for k in 0..6 {
                let v = b[k];
                edges.push(if v.id == CONST {
                    Edge { parent: CONST, partial: v.val }
                } else {
                    Edge { parent: v.id, partial: inv[i][k] }
                });
            }
            out[i] = if edges.iter().all(|e| e.parent == CONST) {
                self.constant(x[i])
            } else {
                self.push(Kind::Solve(i as u8), x[i], &edges)
            };
        }
        Ok(out)
    }

    /// Records a dense layer reading its weights from `params`.
    pub fn dense<'t>(&'t self, params: &[f64], layer: &DenseLayer, input: &[Var<'t>]) -> Vec<Var<'t>> {
        let input_values: Vec<f64> = input.iter().map(|v| v.val).collect();
        let mut out = Vec::with_capacity(layer.n_out);
        layer.forward(params, &input_values, &mut out);
        let mut inner = self.inner.borrow_mut();
        let out_start = inner.nodes.len() as u32;
        let block = inner.blocks.len() as u32;
        inner.blocks.push(DenseBlock {
            layer: *layer,
            inputs: input.iter().map(|v| v.id).collect(),
            input_values,
            out_start,
        });
        let e = inner.edges.len() as u32;
        for (k, &value) in out.iter().enumerate() {
            let kind = if k == 0 { Kind::Dense(block) } else { Kind::DenseOut };
            inner.nodes.push(Node { kind, value, edges: (e, e) });
        }
        drop(inner);
        out.iter()
            .enumerate()
            .map(|(k, &val)| Var { tape: self, id: out_start + k as u32, val })
            .collect()
    }

    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, DiffError> {
        self.backward_with_params(root, &[])
    }

    /// Reverse sweep from `root`. `params` must be the parameter vector the
    /// dense layers were recorded against (or empty if there were none).
    pub fn backward_with_params(&self, root: Var<'_>, params: &[f64]) -> Result<Gradients, DiffError> {
        if !std::ptr::eq(root.tape, self) {
            return Err(DiffError::ForeignTape);
        }
        let inner = self.inner.borrow();
        if let Some(err) = &inner.error {
            return Err(err.clone());
        }
        let n = inner.nodes.len();
        let mut adj = vec![0.0; n];
        let mut pgrad = vec![0.0; params.len()];
        if root.id == CONST {
            return Ok(Gradients { nodes: adj, params: pgrad });
        }
        if root.id as usize >= n {
            return Err(DiffError::BadRoot);
        }
        adj[root.id as usize] = 1.0;
        let mut delta = Vec::new();
        for i in (0..=root.id as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            match node.kind {
                Kind::Leaf | Kind::DenseOut => {}
                Kind::Op(_) | Kind::Custom | Kind::Solve(_) => {
                    for e in &inner.edges[node.edges.0 as usize..node.edges.1 as usize] {
                        if e.parent != CONST {
                            adj[e.parent as usize] += g * e.partial;
                        }
                    }
                }
                Kind::Dense(b) => {
                    let block = &inner.blocks[b as usize];
                    dense_backward(block, &inner.nodes, &mut adj, params, &mut pgrad, &mut delta);
                }
            }
        }
        Ok(Gradients { nodes: adj, params: pgrad })
    }

    /// Recomputes every node value from its recorded operands. Custom nodes
    /// keep their stored value.
    pub fn replay(&self, params: &[f64]) -> Vec<f64> {
        let inner = self.inner.borrow();
        let mut values = vec![0.0; inner.nodes.len()];
        let operand = |values: &[f64], e: &Edge| {
            if e.parent == CONST {
                e.partial
            } else {
                values[e.parent as usize]
            }
        };
        let mut buf = Vec::new();
        for (i, node) in inner.nodes.iter().enumerate() {
            let edges = &inner.edges[node.edges.0 as usize..node.edges.1 as usize];
            values[i] = match node.kind {
                Kind::Leaf | Kind::Custom => node.value,
                Kind::Op(op) => {
                    let ops: Vec<f64> = edges.iter().map(|e| operand(&values, e)).collect();
                    eval_value(op, &ops)
                }
                Kind::Solve(k) => {
                    let ops: Vec<f64> = edges.iter().map(|e| operand(&values, e)).collect();
                    let mut a = [[0.0; 6]; 6];
                    for r in 0..6 {
                        a[r].copy_from_slice(&ops[r * 6..r * 6 + 6]);
                    }
                    let b: [f64; 6] = ops[36..42].try_into().expect("42 operands");
                    linalg::Lu6::factor(&a).map(|lu| lu.solve(&b)[k as usize]).unwrap_or(f64::NAN)
                }
                Kind::Dense(b) => {
                    let block = &inner.blocks[b as usize];
                    let input: Vec<f64> = block
                        .inputs
                        .iter()
                        .zip(&block.input_values)
                        .map(|(&id, &v)| if id == CONST { v } else { values[id as usize] })
                        .collect();
                    block.layer.forward(params, &input, &mut buf);
                    for (k, &y) in buf.iter().enumerate().skip(1) {
                        values[i + k] = y;
                    }
                    buf[0]
                }
                Kind::DenseOut => values[i],
            };
        }
        values
    }

    /// Stored forward values, in node order.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().nodes.iter().map(|n| n.value).collect()
    }
}

fn dense_backward(
    block: &DenseBlock,
    nodes: &[Node],
    adj: &mut [f64],
    params: &[f64],
    pgrad: &mut [f64],
    delta: &mut Vec<f64>,
) {
    let layer = &block.layer;
    let start = block.out_start as usize;
    delta.clear();
    delta.extend((0..layer.n_out).map(|k| {
        adj[start + k] * layer.activation.slope_from_output(nodes[start + k].value)
    }));
    let has_params = !params.is_empty();
    let w = if has_params {
        &params[layer.weight_offset..layer.weight_offset + layer.n_in * layer.n_out]
    } else {
        &[][..]
    };
    if has_params {
        for (k, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            pgrad[layer.bias_offset + k] += d;
            let row = &mut pgrad[layer.weight_offset + k * layer.n_in..][..layer.n_in];
            for (g, &x) in row.iter_mut().zip(&block.input_values) {
                *g += d * x;
            }
        }
        for (i, &id) in block.inputs.iter().enumerate() {
            if id == CONST {
                continue;
            }
            let mut s = 0.0;
            for (k, &d) in delta.iter().enumerate() {
                s += w[k * layer.n_in + i] * d;
            }
            adj[id as usize] += s;
        }
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

fn eval_value(op: Op, v: &[f64]) -> f64 {
    eval_op(op, v).0
}

/// Value and local partials of an elementary operation. Non-smooth points
/// take the subgradient of the selected branch, ties going to the first
/// operand.
fn eval_op(op: Op, v: &[f64]) -> (f64, Partials) {
    match op {
        Op::Add => (v[0] + v[1], smallvec![1.0, 1.0]),
        Op::Sub => (v[0] - v[1], smallvec![1.0, -1.0]),
        Op::Mul => (v[0] * v[1], smallvec![v[1], v[0]]),
        Op::Div => (v[0] / v[1], smallvec![1.0 / v[1], -v[0] / (v[1] * v[1])]),
        Op::Pow => {
            let y = v[0].powf(v[1]);
            let dexp = if v[0] > 0.0 { y * v[0].ln() } else { 0.0 };
            (y, smallvec![v[1] * v[0].powf(v[1] - 1.0), dexp])
        }
        Op::Neg => (-v[0], smallvec![-1.0]),
        Op::Sqrt => {
            let y = v[0].sqrt();
            (y, smallvec![if y > 0.0 { 0.5 / y } else { 0.0 }])
        }
        Op::Tan => {
            let c = v[0].cos();
            (v[0].tan(), smallvec![1.0 / (c * c)])
        }
        Op::Atan => (v[0].atan(), smallvec![1.0 / (1.0 + v[0] * v[0])]),
        Op::Atan2 => {
            let (y, x) = (v[0], v[1]);
            let r2 = x * x + y * y;
            if r2 == 0.0 {
                (0.0, smallvec![0.0, 0.0])
            } else {
                (y.atan2(x), smallvec![x / r2, -y / r2])
            }
        }
        Op::Sin => (v[0].sin(), smallvec![v[0].cos()]),
        Op::Cos => (v[0].cos(), smallvec![-v[0].sin()]),
        Op::Tanh => {
            let t = v[0].tanh();
            (t, smallvec![1.0 - t * t])
        }
        Op::Sigmoid => {
            let s = sigmoid(v[0]);
            (s, smallvec![s * (1.0 - s)])
        }
        Op::Exp => {
            let e = v[0].exp();
            (e, smallvec![e])
        }
        Op::Max => {
            if v[0] >= v[1] {
                (v[0], smallvec![1.0, 0.0])
            } else {
                (v[1], smallvec![0.0, 1.0])
            }
        }
        Op::Min => {
            if v[0] <= v[1] {
                (v[0], smallvec![1.0, 0.0])
            } else {
                (v[1], smallvec![0.0, 1.0])
            }
        }
        Op::Abs => (v[0].abs(), smallvec![if v[0] >= 0.0 { 1.0 } else { -1.0 }]),
        Op::Norm => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let p = v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect();
            (n, p)
        }
    }
}

/// Scalar abstraction shared by `f64` and tape variables.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn hypot(self, other: Self) -> Self;
    /// Node with externally computed value and partials. `self` only
    /// supplies the context.
    fn custom(self, value: f64, partials: &[(Self, f64)]) -> Self;
    fn solve6(a: &[[Self; 6]; 6], b: &[Self; 6]) -> Result<[Self; 6], DiffError>;
    fn dense(params: &[f64], layer: &DenseLayer, input: &[Self]) -> Vec<Self>;

    fn relu(self) -> Self {
        self.max(self.lift(0.0))
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn atan2(self, x: Self) -> Self {
        if self == 0.0 && x == 0.0 {
            0.0
        } else {
            f64::atan2(self, x)
        }
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn custom(self, value: f64, _partials: &[(Self, f64)]) -> Self {
        value
    }
    fn solve6(a: &[[Self; 6]; 6], b: &[Self; 6]) -> Result<[Self; 6], DiffError> {
        linalg::Lu6::factor(a).map(|lu| lu.solve(b)).ok_or(DiffError::Singular { node: CONST })
    }
    fn dense(params: &[f64], layer: &DenseLayer, input: &[Self]) -> Vec<Self> {
        let mut out = Vec::with_capacity(layer.n_out);
        layer.forward(params, input, &mut out);
        out
    }
}

impl<'t> Var<'t> {
    fn unary(self, op: Op) -> Self {
        self.tape.apply(op, &[self])
    }
    fn binary(self, op: Op, other: Self) -> Self {
        self.tape.apply(op, &[self, other])
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    fn tan(self) -> Self {
        self.unary(Op::Tan)
    }
    fn atan(self) -> Self {
        self.unary(Op::Atan)
    }
    fn atan2(self, x: Self) -> Self {
        self.binary(Op::Atan2, x)
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }
    fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid)
    }
    fn abs(self) -> Self {
        self.unary(Op::Abs)
    }
    fn max(self, other: Self) -> Self {
        self.binary(Op::Max, other)
    }
    fn min(self, other: Self) -> Self {
        self.binary(Op::Min, other)
    }
    fn powi(self, n: i32) -> Self {
        let v = self.val;
        self.tape.custom(v.powi(n), &[(self, n as f64 * v.powi(n - 1))])
    }
    fn hypot(self, other: Self) -> Self {
        self.tape.apply(Op::Norm, &[self, other])
    }
    fn custom(self, value: f64, partials: &[(Self, f64)]) -> Self {
        self.tape.custom(value, partials)
    }
    fn solve6(a: &[[Self; 6]; 6], b: &[Self; 6]) -> Result<[Self; 6], DiffError> {
        b[0].tape.solve6(a, b)
    }
    fn dense(params: &[f64], layer: &DenseLayer, input: &[Self]) -> Vec<Self> {
        input[0].tape.dense(params, layer, input)
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary($op, rhs)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                self.binary($op, self.tape.constant(rhs))
            }
        }
    };
}

var_binop!(Add, add, Op::Add);
var_binop!(Sub, sub, Op::Sub);
var_binop!(Mul, mul, Op::Mul);
var_binop!(Div, div, Op::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg)
    }
}
