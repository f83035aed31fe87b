//! Tape-based reverse-mode differentiation.
//!
//! Every forward operation appends a node to a [`Tape`]. [`Tape::grad`] walks
//! the tape backwards and records the vector-Jacobian products as *new* tape
//! nodes, so a gradient is itself a differentiable value. Differentiating an
//! outer loss evaluated at `θ - lr · ∇inner(θ)` therefore yields the exact
//! second-order meta-gradient; detaching the inner gradient gives the
//! first-order variant.
//!
//! Any operation that produces a NaN or an infinity aborts with
//! [`Error::NonFinite`] naming the operation and the node index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    ClampMin(Var, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    SumAll(Var),
    /// Scalar broadcast to a full shape.
    Expand(Var, Vec<usize>),
    SumRows(Var),
    BroadcastRows(Var, usize),
    RowSum(Var),
    BroadcastCols(Var, usize),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    AddRowVector(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::MatMul { .. } => "matmul",
            Op::SumAll(..) => "sum",
            Op::Expand(..) => "expand",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::RowSum(..) => "row_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::LogSoftmax(..) => "log_softmax",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::AddRowVector(..) => "add_row_vector",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Const => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::ConcatCols(a, b) | Op::AddRowVector(a, b) => vec![a, b],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::ClampMin(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::RowSum(a)
            | Op::BroadcastCols(a, _)
            | Op::LogSoftmax(a)
            | Op::SliceCols(a, _, _) => vec![a],
            Op::Expand(a, _) => vec![a],
        }
    }

    /// Evaluates the operation given a lookup for input values.
    fn eval<'a>(&self, val: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
        Ok(match self {
            Op::Leaf | Op::Const => unreachable!("leaves carry their own value"),
            Op::Add(a, b) => val(*a).add(val(*b))?,
            Op::Sub(a, b) => val(*a).sub(val(*b))?,
            Op::Mul(a, b) => val(*a).mul(val(*b))?,
            Op::Div(a, b) => val(*a).zip_map(val(*b), "div", |x, y| x / y)?,
            Op::Scale(a, c) => val(*a).scale(*c),
            Op::AddScalar(a, c) => val(*a).map(|x| x + c),
            Op::Exp(a) => val(*a).map(math::exp),
            Op::Log(a) => val(*a).map(math::ln),
            Op::Sigmoid(a) => val(*a).map(math::sigmoid),
            Op::Softplus(a) => val(*a).map(math::softplus),
            Op::Relu(a) => val(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::ClampMin(a, c) => val(*a).map(|x| if x > *c { x } else { *c }),
            Op::MatMul { a, b, ta, tb } => Tensor::matmul(val(*a), val(*b), *ta, *tb)?,
            Op::SumAll(a) => Tensor::scalar(val(*a).sum()),
            Op::Expand(a, shape) => {
                let v = val(*a);
                if v.len() != 1 {
                    return Err(Error::Shape { op: "expand", detail: format!("source {:?} is not a scalar", v.shape()) });
                }
                Tensor::full(shape, v.item())
            }
            Op::SumRows(a) => val(*a).sum_rows()?,
            Op::BroadcastRows(a, m) => val(*a).broadcast_rows(*m)?,
            Op::RowSum(a) => val(*a).row_sums()?,
            Op::BroadcastCols(a, n) => val(*a).broadcast_cols(*n)?,
            Op::LogSoftmax(a) => val(*a).log_softmax_rows()?,
            Op::ConcatCols(a, b) => Tensor::concat_cols(val(*a), val(*b))?,
            Op::SliceCols(a, s, e) => val(*a).slice_cols(*s, *e)?,
            Op::AddRowVector(a, b) => val(*a).add_row_vector(val(*b))?,
        })
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation. Nodes are stored in topological
/// order: every node's inputs have smaller indices.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_raw(value, Op::Leaf)
    }

    /// A constant with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_raw(value, Op::Const)
    }

    /// Copies the value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_raw(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name(), node });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(node))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = {
            let nodes = &self.nodes;
            op.eval(|v| &nodes[v.0].value)?
        };
        self.push_raw(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// `max(a, c)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::ClampMin(a, c))
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.push(Op::MatMul { a, b, ta, tb })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(invalid("mean of an empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Expand(a, shape.to_vec()))
    }

    /// Column sums `[m, n] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        self.push(Op::BroadcastRows(a, m))
    }

    /// Row sums `[m, n] -> [m]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowSum(a))
    }

    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        self.push(Op::BroadcastCols(a, n))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let l = self.log_softmax(a)?;
        self.exp(l)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols(a, start, end))
    }

    /// Adds a `[n]` bias to every row of `[m, n]`.
    pub fn add_row_vector(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::AddRowVector(a, b))
    }

    /// Gradients of the scalar `output` with respect to `wrt`, recorded on the
    /// tape so they can be differentiated again. Parameters that `output` does
    /// not depend on receive a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape {
                op: "grad",
                detail: format!("output must be a scalar, got {:?}", self.value(output).shape()),
            });
        }
        let end = output.0 + 1;
        let mut needs = vec![false; end];
        for w in wrt {
            if w.0 < end {
                needs[w.0] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = self.nodes[i].op.inputs().iter().any(|v| needs[v.0]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        if needs[output.0] {
            let shape = self.value(output).shape().to_vec();
            adj[output.0] = Some(self.constant(Tensor::full(&shape, 1.0))?);
        }
        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !needs[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.vjp(Var(i), &op, g, &needs)? {
                adj[input.0] = Some(match adj[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.value(*w).shape().to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of one node, expressed as tape operations.
    fn vjp(&mut self, out: Var, op: &Op, g: Var, needs: &[bool]) -> Result<Vec<(Var, Var)>> {
        let want = |v: Var| needs[v.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if want(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if want(a) {
                    res.push((a, self.div(g, b)?));
                }
                if want(b) {
                    let go = self.mul(g, out)?;
                    let q = self.div(go, b)?;
                    res.push((b, self.neg(q)?));
                }
            }
            Op::Scale(a, c) => {
                if want(a) {
                    res.push((a, self.scale(g, c)?));
                }
            }
            Op::AddScalar(a, _) => {
                if want(a) {
                    res.push((a, g));
                }
            }
            Op::Exp(a) => {
                if want(a) {
                    res.push((a, self.mul(g, out)?));
                }
            }
            Op::Log(a) => {
                if want(a) {
                    res.push((a, self.div(g, a)?));
                }
            }
            Op::Sigmoid(a) => {
                if want(a) {
                    let one_minus = {
                        let n = self.neg(out)?;
                        self.add_scalar(n, 1.0)?
                    };
                    let go = self.mul(g, out)?;
                    res.push((a, self.mul(go, one_minus)?));
                }
            }
            Op::Softplus(a) => {
                if want(a) {
                    let s = self.sigmoid(a)?;
                    res.push((a, self.mul(g, s)?));
                }
            }
            Op::Relu(a) => {
                if want(a) {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let m = self.constant(mask)?;
                    res.push((a, self.mul(g, m)?));
                }
            }
            Op::ClampMin(a, c) => {
                if want(a) {
                    let mask = self.value(a).map(|x| if x > c { 1.0 } else { 0.0 });
                    let m = self.constant(mask)?;
                    res.push((a, self.mul(g, m)?));
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                if want(a) {
                    let ga = match (ta, tb) {
                        (false, false) => self.matmul(g, b, false, true)?,
                        (false, true) => self.matmul(g, b, false, false)?,
                        (true, false) => self.matmul(b, g, false, true)?,
                        (true, true) => self.matmul(b, g, true, true)?,
                    };
                    res.push((a, ga));
                }
                if want(b) {
                    let gb = match (ta, tb) {
                        (false, false) => self.matmul(a, g, true, false)?,
                        (false, true) => self.matmul(g, a, true, false)?,
                        (true, false) => self.matmul(a, g, false, false)?,
                        (true, true) => self.matmul(g, a, true, true)?,
                    };
                    res.push((b, gb));
                }
            }
            Op::SumAll(a) => {
                if want(a) {
                    let shape = self.value(a).shape().to_vec();
                    res.push((a, self.expand(g, &shape)?));
                }
            }
            Op::Expand(a, _) => {
                if want(a) {
                    let s = self.sum(g)?;
                    let shape = self.value(a).shape().to_vec();
                    let s = if shape.is_empty() {
                        s
                    } else {
                        // one-element non-scalar source
                        self.expand(s, &shape)?
                    };
                    res.push((a, s));
                }
            }
            Op::SumRows(a) => {
                if want(a) {
                    let m = self.value(a).rows();
                    res.push((a, self.broadcast_rows(g, m)?));
                }
            }
            Op::BroadcastRows(a, _) => {
                if want(a) {
                    res.push((a, self.sum_rows(g)?));
                }
            }
            Op::RowSum(a) => {
                if want(a) {
                    let n = self.value(a).cols();
                    res.push((a, self.broadcast_cols(g, n)?));
                }
            }
            Op::BroadcastCols(a, _) => {
                if want(a) {
                    res.push((a, self.row_sum(g)?));
                }
            }
            Op::LogSoftmax(a) => {
                if want(a) {
                    let n = self.value(a).cols();
                    let p = self.exp(out)?;
                    let gs = self.row_sum(g)?;
                    let gs = self.broadcast_cols(gs, n)?;
                    let pg = self.mul(p, gs)?;
                    res.push((a, self.sub(g, pg)?));
                }
            }
            Op::ConcatCols(a, b) => {
                let na = self.value(a).cols();
                let nb = self.value(b).cols();
                if want(a) {
                    res.push((a, self.slice_cols(g, 0, na)?));
                }
                if want(b) {
                    res.push((b, self.slice_cols(g, na, na + nb)?));
                }
            }
            Op::SliceCols(a, s, e) => {
                if want(a) {
                    let (m, n) = self.value(a).dims2("slice_cols")?;
                    let mut acc = g;
                    if s > 0 {
                        let z = self.constant(Tensor::zeros(&[m, s]))?;
                        acc = self.concat_cols(z, acc)?;
                    }
                    if e < n {
                        let z = self.constant(Tensor::zeros(&[m, n - e]))?;
                        acc = self.concat_cols(acc, z)?;
                    }
                    res.push((a, acc));
                }
            }
            Op::AddRowVector(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, self.sum_rows(g)?));
                }
            }
        }
        Ok(res)
    }

    /// Gradient values of `output` with respect to `wrt`.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let gs = self.grad(output, wrt)?;
        Ok(gs.into_iter().map(|g| self.value(g).clone()).collect())
    }

    /// Re-evaluates every recorded node from the leaves and constants.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Leaf | Op::Const => node.value.clone(),
                ref op => op.eval(|v| &values[v.0])?,
            };
            if !v.is_finite() {
                return Err(Error::NonFinite { op: node.op.name(), node: i });
            }
            values.push(v);
        }
        Ok(values)
    }

    /// Recorded values of all nodes, in tape order.
    pub fn recorded_values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }
}

/// Identifier of a parameter within a flat parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// One gradient tensor per parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMap {
    grads: Vec<Tensor>,
}

impl GradMap {
    pub fn new(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.grads
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        math::sqrt(self.grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum())
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(invalid("gradient maps cover different parameter sets"));
        }
        Ok(Self::new(
            self.grads.iter().zip(&other.grads).map(|(a, b)| a.sub(b)).collect::<Result<Vec<_>>>()?,
        ))
    }
}

/// Evaluates `f` on fresh leaves for `params` and returns its value and the
/// reverse-mode gradient with respect to every parameter.
pub fn value_and_grad<F>(params: &[Tensor], f: F) -> Result<(f64, GradMap)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out);
    let grads = tape.backward(out, &vars)?;
    Ok((value, GradMap::new(grads)))
}

/// How the inner gradient is treated when differentiating through an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Differentiate through the inner gradient (includes the Hessian term).
    FullSecondOrder,
    /// Treat the inner gradient as a constant.
    FirstOrder,
}

/// Records `θ - lr · ∇inner(θ)` on the tape and returns the updated variables.
pub fn inner_update(tape: &mut Tape, params: &[Var], inner: Var, lr: f64, mode: UpdateMode) -> Result<Vec<Var>> {
    if !(lr >= 0.0) {
        return Err(invalid(format!("inner learning rate must be >= 0, got {}", lr)));
    }
    let grads = tape.grad(inner, params)?;
    params
        .iter()
        .zip(grads)
        .map(|(&p, g)| {
            let g = match mode {
                UpdateMode::FullSecondOrder => g,
                UpdateMode::FirstOrder => tape.detach(g)?,
            };
            let step = tape.scale(g, lr)?;
            tape.sub(p, step)
        })
        .collect()
}

/// Gradient of `outer(θ - lr · ∇inner(θ))` with respect to `θ`.
pub fn grad_through_update<O, I>(outer: O, inner: I, params: &[Tensor], inner_lr: f64, mode: UpdateMode) -> Result<GradMap>
where
    O: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
    I: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(inner_lr >= 0.0) {
        return Err(invalid(format!("inner learning rate must be >= 0, got {}", inner_lr)));
    }
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let inner_loss = inner(&mut tape, &vars)?;
    let updated = inner_update(&mut tape, &vars, inner_loss, inner_lr, mode)?;
    let outer_loss = outer(&mut tape, &updated)?;
    Ok(GradMap::new(tape.backward(outer_loss, &vars)?))
}

/// Central finite differences `(f(p + eps) - f(p - eps)) / (2 eps)` for every
/// coordinate of every parameter.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor], eps: f64) -> Result<GradMap>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(invalid(format!("finite-difference step must be > 0, got {}", eps)));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let up = f(&work)?;
            work[p].data_mut()[k] = orig - eps;
            let down = f(&work)?;
            work[p].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(GradMap::new(grads))
}
