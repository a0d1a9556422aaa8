//! Recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order (define-by-run), so the record is
//! already a topological order. Values are computed eagerly as ops are
//! recorded; `forward` re-evaluates the whole graph against fresh input
//! bindings, and `backward` walks the record in reverse accumulating
//! vector-Jacobian products into every registered parameter.

use indexmap::IndexMap;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{matmul, matvec_transposed, outer, sigmoid, softplus, Array, Real};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Recorded operation. Variants carry their input ids and any locals needed
/// to replay the op.
#[derive(Debug, Clone)]
enum Op {
    /// Named trainable leaf.
    Param,
    /// Named rebindable leaf.
    Input,
    /// Anonymous fixed leaf (targets, noise draws, masks).
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId, Real),
    Scale(NodeId, Real),
    Neg(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Clamp(NodeId, Real, Real),
    Matmul(NodeId, NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    /// Row `k` of a rank-2 node, as a vector.
    Row(NodeId, usize),
    ReduceSum(NodeId),
    ReduceMean(NodeId),
    /// Identity forward, zero backward.
    Detach(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Input => "input",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Neg(..) => "neg",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Matmul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Row(..) => "row",
            Op::ReduceSum(..) => "reduce_sum",
            Op::ReduceMean(..) => "reduce_mean",
            Op::Detach(..) => "detach",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array,
}

/// Gradients keyed by parameter name, in registration order.
pub type GradientMap = IndexMap<String, Array>;

/// Define-by-run computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, NodeId>,
    inputs: HashMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Array) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Register a named trainable leaf. Names must be unique per graph.
    pub fn param(&mut self, name: &str, value: Array) -> NodeId {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.push(Op::Param, value);
        self.params.insert(name.to_string(), id);
        id
    }

    /// Register a named rebindable input leaf.
    pub fn input(&mut self, name: &str, value: Array) -> NodeId {
        assert!(
            !self.inputs.contains_key(name),
            "duplicate input name {name:?}"
        );
        let id = self.push(Op::Input, value);
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, v: Real) -> NodeId {
        self.constant(Array::scalar(v))
    }

    /// Mark a node as a named output of `forward`.
    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    /// Replace the value of a named parameter leaf. Downstream values are
    /// stale until [`Graph::recompute`] runs.
    pub fn set_param(&mut self, name: &str, value: Array) -> Result<()> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))?;
        if self.nodes[id.0].value.shape() != value.shape() {
            return Err(Error::shape(
                format!("set_param({name})"),
                format!(
                    "expected {:?}, got {:?}",
                    self.nodes[id.0].value.shape(),
                    value.shape()
                ),
            ));
        }
        self.nodes[id.0].value = value;
        Ok(())
    }

    pub fn param_value(&self, name: &str) -> Option<&Array> {
        self.params.get(name).map(|id| &self.nodes[id.0].value)
    }

    // ── Recorded ops ─────────────────────────────────────────────────
    //
    // Builders validate shapes up front (caller bug -> panic with the node
    // context) and compute the output value immediately.

    fn elementwise_pair(&mut self, op_name: &str, a: NodeId, b: NodeId) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(
            sa, sb,
            "{op_name}: operand shapes differ, {sa:?} vs {sb:?} (nodes {} and {})",
            a.0, b.0
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise_pair("add", a, b);
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise_pair("sub", a, b);
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise_pair("mul", a, b);
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise_pair("div", a, b);
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x / y);
        self.push(Op::Div(a, b), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x + c);
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn scale(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.exp());
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.ln());
        self.push(Op::Log(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: Real, hi: Real) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert!(
            sa.len() == 2 && !sb.is_empty() && sb.len() <= 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} @ {sb:?} (nodes {} and {})",
            a.0,
            b.0
        );
        let v = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(Op::Matmul(a, b), v)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        assert!(
            self.nodes[a.0].value.is_vector(),
            "softmax expects a rank-1 node"
        );
        let v = eval_softmax(&self.nodes[a.0].value);
        self.push(Op::Softmax(a), v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero nodes");
        let mut data = Vec::new();
        for &p in parts {
            assert!(
                self.nodes[p.0].value.is_vector(),
                "concat expects rank-1 nodes"
            );
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        self.push(Op::Concat(parts.to_vec()), Array::vector(data))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert!(v.is_vector(), "slice expects a rank-1 node");
        assert!(
            start + len <= v.numel(),
            "slice {start}..{} out of bounds for length {}",
            start + len,
            v.numel()
        );
        let out = Array::vector(v.data()[start..start + len].to_vec());
        self.push(Op::Slice(a, start, len), out)
    }

    pub fn row(&mut self, a: NodeId, k: usize) -> NodeId {
        let v = &self.nodes[a.0].value;
        assert!(v.is_matrix(), "row expects a rank-2 node");
        assert!(k < v.rows(), "row {k} out of bounds for {} rows", v.rows());
        let cols = v.cols();
        let out = Array::vector(v.data()[k * cols..(k + 1) * cols].to_vec());
        self.push(Op::Row(a, k), out)
    }

    pub fn reduce_sum(&mut self, a: NodeId) -> NodeId {
        let s: Real = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::ReduceSum(a), Array::scalar(s))
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.numel();
        assert!(n > 0, "reduce_mean of empty node");
        let s: Real = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::ReduceMean(a), Array::scalar(s / n as Real))
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.clone();
        self.push(Op::Detach(a), v)
    }

    // ── Evaluation ───────────────────────────────────────────────────

    fn eval_node(&self, idx: usize) -> Array {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &self.nodes[idx].op {
            Op::Param | Op::Input | Op::Const => self.nodes[idx].value.clone(),
            Op::Add(a, b) => val(*a).zip_map(val(*b), |x, y| x + y),
            Op::Sub(a, b) => val(*a).zip_map(val(*b), |x, y| x - y),
            Op::Mul(a, b) => val(*a).zip_map(val(*b), |x, y| x * y),
            Op::Div(a, b) => val(*a).zip_map(val(*b), |x, y| x / y),
            Op::AddScalar(a, c) => val(*a).map(|x| x + c),
            Op::Scale(a, c) => val(*a).map(|x| x * c),
            Op::Neg(a) => val(*a).map(|x| -x),
            Op::Tanh(a) => val(*a).map(|x| x.tanh()),
            Op::Sigmoid(a) => val(*a).map(sigmoid),
            Op::Exp(a) => val(*a).map(|x| x.exp()),
            Op::Log(a) => val(*a).map(|x| x.ln()),
            Op::Softplus(a) => val(*a).map(softplus),
            Op::Relu(a) => val(*a).map(|x| x.max(0.0)),
            Op::Clamp(a, lo, hi) => val(*a).map(|x| x.clamp(*lo, *hi)),
            Op::Matmul(a, b) => matmul(val(*a), val(*b)),
            Op::Softmax(a) => eval_softmax(val(*a)),
            Op::Concat(parts) => {
                let mut data = Vec::new();
                for p in parts {
                    data.extend_from_slice(val(*p).data());
                }
                Array::vector(data)
            }
            Op::Slice(a, start, len) => {
                Array::vector(val(*a).data()[*start..start + len].to_vec())
            }
            Op::Row(a, k) => {
                let v = val(*a);
                let cols = v.cols();
                Array::vector(v.data()[k * cols..(k + 1) * cols].to_vec())
            }
            Op::ReduceSum(a) => Array::scalar(val(*a).data().iter().sum()),
            Op::ReduceMean(a) => {
                let n = val(*a).numel() as Real;
                Array::scalar(val(*a).data().iter().sum::<Real>() / n)
            }
            Op::Detach(a) => val(*a).clone(),
        }
    }

    /// Re-evaluate every node from the leaves, checking finiteness.
    pub fn recompute(&mut self) -> Result<()> {
        for idx in 0..self.nodes.len() {
            let v = self.eval_node(idx);
            if let Some(pos) = v.first_non_finite() {
                return Err(Error::numeric(
                    format!("node {} ({})", idx, self.nodes[idx].op.name()),
                    format!("element {pos} is not finite"),
                ));
            }
            self.nodes[idx].value = v;
        }
        Ok(())
    }

    /// Bind the given named inputs, re-evaluate the graph, and return the
    /// marked outputs.
    pub fn forward(&mut self, inputs: &[(&str, Array)]) -> Result<Vec<(String, Array)>> {
        for (name, value) in inputs {
            let id = *self
                .inputs
                .get(*name)
                .ok_or_else(|| Error::contract(format!("unknown input {name:?}")))?;
            if self.nodes[id.0].value.shape() != value.shape() {
                return Err(Error::shape(
                    format!("input {name:?} (node {})", id.0),
                    format!(
                        "declared {:?}, bound {:?}",
                        self.nodes[id.0].value.shape(),
                        value.shape()
                    ),
                ));
            }
            self.nodes[id.0].value = value.clone();
        }
        self.recompute()?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.nodes[id.0].value.clone()))
            .collect())
    }

    /// Verify that a set of labeled nodes is finite, naming the first
    /// offending label in the error.
    pub fn check_finite(&self, labeled: &[(&str, NodeId)]) -> Result<()> {
        for (label, id) in labeled {
            if !self.nodes[id.0].value.all_finite() {
                return Err(Error::numeric(
                    format!("{label} (node {})", id.0),
                    "value is not finite".to_string(),
                ));
            }
        }
        Ok(())
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar node with respect to every
    /// registered parameter. Parameters the output does not depend on get
    /// zero gradients.
    pub fn backward(&mut self, output: NodeId) -> Result<GradientMap> {
        if !self.nodes[output.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar output, node {} has shape {:?}",
                output.0,
                self.nodes[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(d_out) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &d_out, &mut grads);
            // Leaves keep their accumulated gradient.
            if matches!(self.nodes[idx].op, Op::Param | Op::Input | Op::Const) {
                grads[idx] = Some(d_out);
            }
        }

        let mut out = GradientMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Array::zeros(self.nodes[id.0].value.shape().to_vec()));
            if let Some(pos) = g.first_non_finite() {
                return Err(Error::numeric(
                    format!("gradient of {name}"),
                    format!("element {pos} is not finite"),
                ));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, d_out: &Array, grads: &mut [Option<Array>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut accum = |id: NodeId, g: Array| match &mut grads[id.0] {
            Some(existing) => existing.add_in_place(&g),
            slot @ None => *slot = Some(g),
        };
        match &self.nodes[idx].op {
            Op::Param | Op::Input | Op::Const | Op::Detach(_) => {}
            Op::Add(a, b) => {
                accum(*a, d_out.clone());
                accum(*b, d_out.clone());
            }
            Op::Sub(a, b) => {
                accum(*a, d_out.clone());
                accum(*b, d_out.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accum(*a, d_out.zip_map(val(*b), |g, y| g * y));
                accum(*b, d_out.zip_map(val(*a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                accum(*a, d_out.zip_map(val(*b), |g, y| g / y));
                let da = val(*a);
                let db = val(*b);
                let mut g = d_out.clone();
                for ((gv, &x), &y) in g
                    .data_mut()
                    .iter_mut()
                    .zip(da.data().iter())
                    .zip(db.data().iter())
                {
                    *gv = -*gv * x / (y * y);
                }
                accum(*b, g);
            }
            Op::AddScalar(a, _) => accum(*a, d_out.clone()),
            Op::Scale(a, c) => accum(*a, d_out.map(|g| g * c)),
            Op::Neg(a) => accum(*a, d_out.map(|g| -g)),
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                accum(*a, d_out.zip_map(y, |g, t| g * (1.0 - t * t)));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                accum(*a, d_out.zip_map(y, |g, s| g * s * (1.0 - s)));
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                accum(*a, d_out.zip_map(y, |g, e| g * e));
            }
            Op::Log(a) => accum(*a, d_out.zip_map(val(*a), |g, x| g / x)),
            Op::Softplus(a) => accum(*a, d_out.zip_map(val(*a), |g, x| g * sigmoid(x))),
            Op::Relu(a) => {
                accum(*a, d_out.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Clamp(a, lo, hi) => {
                accum(
                    *a,
                    d_out.zip_map(val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
                );
            }
            Op::Matmul(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                if bv.is_vector() {
                    // y = A x: dA = g ⊗ x, dx = A^T g
                    accum(*a, outer(d_out.data(), bv.data()));
                    accum(*b, matvec_transposed(av, d_out.data()));
                } else {
                    // Y = A B: dA = G B^T, dB = A^T G
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    let g = d_out.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv.data()[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av.data()[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] = acc;
                        }
                    }
                    accum(*a, Array::new(vec![m, k], da).unwrap());
                    accum(*b, Array::new(vec![k, n], db).unwrap());
                }
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].value;
                let dot: Real = d_out
                    .data()
                    .iter()
                    .zip(y.data().iter())
                    .map(|(&g, &s)| g * s)
                    .sum();
                accum(*a, d_out.zip_map(y, |g, s| s * (g - dot)));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).numel();
                    accum(
                        *p,
                        Array::vector(d_out.data()[offset..offset + n].to_vec()),
                    );
                    offset += n;
                }
            }
            Op::Slice(a, start, _) => {
                let mut g = Array::zeros(val(*a).shape().to_vec());
                g.data_mut()[*start..start + d_out.numel()].copy_from_slice(d_out.data());
                accum(*a, g);
            }
            Op::Row(a, k) => {
                let cols = val(*a).cols();
                let mut g = Array::zeros(val(*a).shape().to_vec());
                g.data_mut()[k * cols..(k + 1) * cols].copy_from_slice(d_out.data());
                accum(*a, g);
            }
            Op::ReduceSum(a) => {
                let g = d_out.item();
                accum(*a, Array::zeros(val(*a).shape().to_vec()).map(|_| g));
            }
            Op::ReduceMean(a) => {
                let g = d_out.item() / val(*a).numel() as Real;
                accum(*a, Array::zeros(val(*a).shape().to_vec()).map(|_| g));
            }
        }
    }
}

fn eval_softmax(x: &Array) -> Array {
    let max = x.data().iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: Real = exps.iter().sum();
    Array::vector(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_example() {
        let mut g = Graph::new();
        let a = g.constant(Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Array::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let y = g.matmul(a, b);
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn activation_identities() {
        let mut g = Graph::new();
        let x = g.constant(Array::vector(vec![0.0]));
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).data(), &[0.5]);
        assert_eq!(g.value(t).data(), &[0.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.constant(Array::vector(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_analytic_gradients() {
        // d/dx (x*x) at x=3 is 6
        let mut g = Graph::new();
        let x = g.param("x", Array::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["x"].data(), &[6.0]);

        // d/dx sigmoid(x) at 0 is 0.25
        let mut g = Graph::new();
        let x = g.param("x", Array::scalar(0.0));
        let y = g.sigmoid(x);
        let grads = g.backward(y).unwrap();
        assert!((grads["x"].item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param("x", Array::vector(vec![1.0, 2.0]));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param("x", Array::scalar(2.0));
        let _unused = g.param("w", Array::vector(vec![1.0, 2.0, 3.0]));
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["w"].data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads["w"].shape(), &[3]);
    }

    #[test]
    fn forward_is_pure_and_rebinds() {
        let mut g = Graph::new();
        let x = g.input("x", Array::vector(vec![1.0, 2.0]));
        let y = g.tanh(x);
        g.mark_output("y", y);
        let out1 = g.forward(&[("x", Array::vector(vec![0.3, -0.7]))]).unwrap();
        let out2 = g.forward(&[("x", Array::vector(vec![0.3, -0.7]))]).unwrap();
        assert_eq!(out1, out2);
    }

    #[test]
    fn forward_shape_error_names_node() {
        let mut g = Graph::new();
        let x = g.input("x", Array::vector(vec![1.0, 2.0]));
        let _y = g.tanh(x);
        let err = g.forward(&[("x", Array::vector(vec![1.0]))]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(err.to_string().contains("x"));
    }

    #[test]
    fn forward_surfaces_non_finite() {
        let mut g = Graph::new();
        let x = g.input("x", Array::vector(vec![1.0]));
        let y = g.log(x);
        g.mark_output("y", y);
        let err = g.forward(&[("x", Array::vector(vec![-1.0]))]).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert!(err.to_string().contains("log"));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Array::scalar(2.0));
        let d = g.detach(x);
        let y = g.mul(x, d); // y = x * sg(x); dy/dx = sg(x) = 2
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["x"].data(), &[2.0]);
    }

    #[test]
    fn backward_is_repeatable_and_linear() {
        let mut g = Graph::new();
        let x = g.param("x", Array::vector(vec![0.4, -1.2, 2.0]));
        let t = g.tanh(x);
        let l1 = g.reduce_sum(t);
        let sq = g.mul(x, x);
        let l2 = g.reduce_mean(sq);
        let both = g.add(l1, l2);
        let g1 = g.backward(l1).unwrap();
        let g2 = g.backward(l2).unwrap();
        let gb = g.backward(both).unwrap();
        for i in 0..3 {
            let sum = g1["x"].data()[i] + g2["x"].data()[i];
            assert!((sum - gb["x"].data()[i]).abs() < 1e-14);
        }
    }
}
