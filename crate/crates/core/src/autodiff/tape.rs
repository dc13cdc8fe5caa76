//! Operation tape and backward pass.

use crate::error::{Error, Result};

use super::kernels;
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach,
    Matmul(NodeId, NodeId),
    VecMat(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Neg(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Softmax { input: NodeId, axis: usize },
    LogSoftmax { input: NodeId, axis: usize },
    Sum(NodeId),
    Mean(NodeId),
    MaxAll(NodeId),
    SelectRow { input: NodeId, row: usize },
    Select { input: NodeId, index: usize },
    Gather { input: NodeId, indices: Vec<usize> },
    Concat(NodeId, NodeId),
    Reshape(NodeId),
    ToImage(NodeId),
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of operations. Inputs always precede their consumers, and
/// the backward pass walks the record in exact reverse order, so gradient
/// propagation needs no explicit topological sort.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf. Leaves are the only nodes whose gradient
    /// persists across backward passes.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Reset every leaf gradient to zero.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.clear_grad();
        }
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { tensor, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_from(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        grad_from: &[NodeId],
        op: Op,
    ) -> NodeId {
        let mut t = Tensor::from_op(shape, data);
        let requires = grad_from
            .iter()
            .any(|&id| self.nodes[id.0].tensor.needs_grad());
        t.set_requires_grad(requires);
        self.push(t, op)
    }

    // ----- matrix products ------------------------------------------------

    /// `C[m×n] = A[m×k] · B[k×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul on {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(ta.data(), tb.data(), m, k, n);
        Ok(self.push_from(vec![m, n], data, &[a, b], Op::Matmul(a, b)))
    }

    /// `y[n] = x[k] · M[k×n]`.
    pub fn vecmat(&mut self, x: NodeId, m: NodeId) -> Result<NodeId> {
        let (tx, tm) = (self.value(x), self.value(m));
        let (sx, sm) = (tx.shape(), tm.shape());
        if sx.len() != 1 || sm.len() != 2 || sx[0] != sm[0] {
            return Err(Error::shape(format!("vecmat on {sx:?} and {sm:?}")));
        }
        let (k, n) = (sm[0], sm[1]);
        let data = kernels::matmul(tx.data(), tm.data(), 1, k, n);
        Ok(self.push_from(vec![n], data, &[x, m], Op::VecMat(x, m)))
    }

    /// `y[m] = M[m×k] · x[k]`.
    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        let (tm, tx) = (self.value(m), self.value(x));
        let (sm, sx) = (tm.shape(), tx.shape());
        if sm.len() != 2 || sx.len() != 1 || sm[1] != sx[0] {
            return Err(Error::shape(format!("matvec on {sm:?} and {sx:?}")));
        }
        let (rows, k) = (sm[0], sm[1]);
        let data = kernels::matmul_nt(tm.data(), tx.data(), rows, k, 1);
        Ok(self.push_from(vec![rows], data, &[m, x], Op::MatVec(m, x)))
    }

    /// Per-row add: `M[r×c] + v[c]`.
    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        let (sm, sv) = (tm.shape(), tv.shape());
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::shape(format!("add_row on {sm:?} and {sv:?}")));
        }
        let c = sv[0];
        let data: Vec<f64> = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tv.data()[i % c])
            .collect();
        Ok(self.push_from(sm.to_vec(), data, &[m, v], Op::AddRow(m, v)))
    }

    // ----- elementwise binary ops ------------------------------------------

    fn binary_shape(&self, a: NodeId, b: NodeId, name: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(sa.to_vec())
        } else if self.value(a).is_scalar() {
            Ok(sb.to_vec())
        } else if self.value(b).is_scalar() {
            Ok(sa.to_vec())
        } else {
            Err(Error::shape(format!("{name} on {sa:?} and {sb:?}")))
        }
    }

    fn broadcast_zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.is_scalar(), tb.is_scalar()) {
            (false, true) => {
                let s = tb.data()[0];
                ta.data().iter().map(|&x| f(x, s)).collect()
            }
            (true, false) => {
                let s = ta.data()[0];
                tb.data().iter().map(|&y| f(s, y)).collect()
            }
            _ => ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "add")?;
        let data = self.broadcast_zip(a, b, |x, y| x + y);
        Ok(self.push_from(shape, data, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "sub")?;
        let data = self.broadcast_zip(a, b, |x, y| x - y);
        Ok(self.push_from(shape, data, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "mul")?;
        let data = self.broadcast_zip(a, b, |x, y| x * y);
        Ok(self.push_from(shape, data, &[a, b], Op::Mul(a, b)))
    }

    // ----- elementwise unary ops --------------------------------------------

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_from(shape, data, &[a], op)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x * c, Op::MulScalar(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Exponential; overflow to infinity is surfaced as an error.
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let id = self.unary(a, f64::exp, Op::Exp(a));
        if let Some(bad) = self.value(id).data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("exp produced {bad}")));
        }
        Ok(id)
    }

    /// Natural log; defined only for strictly positive inputs.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Square root; defined for non-negative inputs.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v < 0.0) {
            return Err(Error::domain(format!("sqrt of negative value {bad}")));
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    // ----- softmax family ----------------------------------------------------

    fn lane_op(
        &mut self,
        a: NodeId,
        axis: usize,
        apply: impl Fn(&[f64], &mut [f64]),
        op: Op,
    ) -> Result<NodeId> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = t.data();
        let mut data = vec![0.0; src.len()];
        let mut lane = vec![0.0; axis_len];
        let mut lane_out = vec![0.0; axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for j in 0..axis_len {
                    lane[j] = src[base + j * inner];
                }
                apply(&lane, &mut lane_out);
                for j in 0..axis_len {
                    data[base + j * inner] = lane_out[j];
                }
            }
        }
        Ok(self.push_from(shape, data, &[a], op))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.lane_op(
            a,
            axis,
            kernels::softmax_lane,
            Op::Softmax { input: a, axis },
        )
    }

    /// Fused log-softmax along `axis`; avoids log(0) for saturated lanes.
    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.lane_op(
            a,
            axis,
            kernels::log_softmax_lane,
            Op::LogSoftmax { input: a, axis },
        )
    }

    // ----- reductions ---------------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_from(vec![1], vec![s], &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let m = s / t.len() as f64;
        self.push_from(vec![1], vec![m], &[a], Op::Mean(a))
    }

    /// Maximum over all elements; gradient routes to the first maximum.
    pub fn max_all(&mut self, a: NodeId) -> NodeId {
        let idx = kernels::argmax(self.value(a).data());
        let v = self.value(a).data()[idx];
        self.push_from(vec![1], vec![v], &[a], Op::MaxAll(a))
    }

    // ----- indexing / restructuring --------------------------------------------

    /// Row `row` of a matrix as a vector (embedding lookup).
    pub fn select_row(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(a);
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!("select_row on {shape:?}")));
        }
        if row >= shape[0] {
            return Err(Error::contract(format!(
                "row index {row} out of range for {shape:?}"
            )));
        }
        let c = shape[1];
        let data = t.data()[row * c..(row + 1) * c].to_vec();
        Ok(self.push_from(vec![c], data, &[a], Op::SelectRow { input: a, row }))
    }

    /// Single element of a vector as a scalar.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::shape(format!("select on {:?}", t.shape())));
        }
        if index >= t.len() {
            return Err(Error::contract(format!(
                "index {index} out of range for length {}",
                t.len()
            )));
        }
        let v = t.data()[index];
        Ok(self.push_from(vec![1], vec![v], &[a], Op::Select { input: a, index }))
    }

    /// Arbitrary re-indexing of the flattened input into a new vector.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for length {}",
                t.len()
            )));
        }
        let data: Vec<f64> = indices.iter().map(|&i| t.data()[i]).collect();
        Ok(self.push_from(
            vec![indices.len()],
            data,
            &[a],
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Concatenate two vectors.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(Error::shape(format!(
                "concat on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let n = data.len();
        Ok(self.push_from(vec![n], data, &[a, b], Op::Concat(a, b)))
    }

    /// View the same elements under a new shape.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(a);
        let len: usize = shape.iter().product();
        if len != t.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!(
                "reshape {:?} -> {shape:?}",
                t.shape()
            )));
        }
        let data = t.data().to_vec();
        Ok(self.push_from(shape, data, &[a], Op::Reshape(a)))
    }

    /// Copy of the value with the gradient path severed.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (shape, data) = (t.shape().to_vec(), t.data().to_vec());
        // grad_from empty: nothing flows back through a detached value.
        self.push_from(shape, data, &[], Op::Detach)
    }

    /// Fused box-constraint transform x' = ½(tanh(w) + 1), clamped to the
    /// strict interior of (0, 1).
    pub fn to_image(&mut self, w: NodeId) -> NodeId {
        self.unary(w, kernels::to_image_scalar, Op::ToImage(w))
    }

    // ----- backward -------------------------------------------------------------

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// calls; interior gradients are transient scratch.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let loss_t = &self.nodes[loss.0].tensor;
        if !loss_t.is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar loss of shape {:?}",
                loss_t.shape()
            )));
        }
        if !loss_t.is_finite_value() {
            return Err(Error::NonFinite("loss is not finite".to_string()));
        }
        if !loss_t.needs_grad() {
            return Err(Error::contract(
                "loss is not reachable from any leaf with requires_grad",
            ));
        }

        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        scratch[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    if self.nodes[i].tensor.needs_grad() {
                        self.nodes[i].tensor.accumulate_grad(&g);
                    }
                }
                Op::Detach => {}
                Op::Matmul(a, b) => {
                    let (m, n) = {
                        let s = self.nodes[i].tensor.shape();
                        (s[0], s[1])
                    };
                    let k = self.nodes[a.0].tensor.shape()[1];
                    if self.flows(a) {
                        let ga = kernels::matmul_nt(&g, self.nodes[b.0].tensor.data(), m, n, k);
                        self.stash(&mut scratch, a, ga);
                    }
                    if self.flows(b) {
                        let gb = kernels::matmul_tn(self.nodes[a.0].tensor.data(), &g, m, k, n);
                        self.stash(&mut scratch, b, gb);
                    }
                }
                Op::VecMat(x, mm) => {
                    let n = self.nodes[i].tensor.len();
                    let k = self.nodes[x.0].tensor.len();
                    if self.flows(x) {
                        // gx = M · g
                        let gx = kernels::matmul_nt(self.nodes[mm.0].tensor.data(), &g, k, n, 1);
                        self.stash(&mut scratch, x, gx);
                    }
                    if self.flows(mm) {
                        // gM = outer(x, g)
                        let gm = kernels::matmul(self.nodes[x.0].tensor.data(), &g, k, 1, n);
                        self.stash(&mut scratch, mm, gm);
                    }
                }
                Op::MatVec(mm, x) => {
                    let rows = self.nodes[i].tensor.len();
                    let k = self.nodes[x.0].tensor.len();
                    if self.flows(mm) {
                        // gM = outer(g, x)
                        let gm = kernels::matmul(&g, self.nodes[x.0].tensor.data(), rows, 1, k);
                        self.stash(&mut scratch, mm, gm);
                    }
                    if self.flows(x) {
                        // gx = Mᵀ · g
                        let gx = kernels::matmul_tn(self.nodes[mm.0].tensor.data(), &g, rows, k, 1);
                        self.stash(&mut scratch, x, gx);
                    }
                }
                Op::AddRow(m, v) => {
                    if self.flows(m) {
                        self.stash(&mut scratch, m, g.clone());
                    }
                    if self.flows(v) {
                        let c = self.nodes[v.0].tensor.len();
                        let mut gv = vec![0.0; c];
                        for (j, &gj) in g.iter().enumerate() {
                            gv[j % c] += gj;
                        }
                        self.stash(&mut scratch, v, gv);
                    }
                }
                Op::Add(a, b) => {
                    self.stash_broadcast(&mut scratch, a, &g, 1.0);
                    self.stash_broadcast(&mut scratch, b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.stash_broadcast(&mut scratch, a, &g, 1.0);
                    self.stash_broadcast(&mut scratch, b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.flows(a) {
                        let ga = self.mul_grad(&g, b, self.nodes[a.0].tensor.len());
                        self.stash(&mut scratch, a, ga);
                    }
                    if self.flows(b) {
                        let gb = self.mul_grad(&g, a, self.nodes[b.0].tensor.len());
                        self.stash(&mut scratch, b, gb);
                    }
                }
                Op::AddScalar(a) => {
                    if self.flows(a) {
                        self.stash(&mut scratch, a, g);
                    }
                }
                Op::MulScalar(a, c) => {
                    if self.flows(a) {
                        self.stash(&mut scratch, a, g.iter().map(|v| v * c).collect());
                    }
                }
                Op::Neg(a) => {
                    if self.flows(a) {
                        self.stash(&mut scratch, a, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Tanh(a) => {
                    if self.flows(a) {
                        let y = self.nodes[i].tensor.data();
                        let ga = g
                            .iter()
                            .zip(y)
                            .map(|(gv, yv)| gv * (1.0 - yv * yv))
                            .collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.flows(a) {
                        let y = self.nodes[i].tensor.data();
                        let ga = g
                            .iter()
                            .zip(y)
                            .map(|(gv, yv)| gv * yv * (1.0 - yv))
                            .collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Exp(a) => {
                    if self.flows(a) {
                        let y = self.nodes[i].tensor.data();
                        let ga = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Log(a) => {
                    if self.flows(a) {
                        let x = self.nodes[a.0].tensor.data();
                        let ga = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Relu(a) => {
                    if self.flows(a) {
                        let x = self.nodes[a.0].tensor.data();
                        let ga = g
                            .iter()
                            .zip(x)
                            .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                            .collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Sqrt(a) => {
                    if self.flows(a) {
                        let y = self.nodes[i].tensor.data();
                        let ga = g.iter().zip(y).map(|(gv, yv)| gv * 0.5 / yv).collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Abs(a) => {
                    if self.flows(a) {
                        let x = self.nodes[a.0].tensor.data();
                        let ga = g
                            .iter()
                            .zip(x)
                            .map(|(gv, xv)| {
                                gv * if *xv > 0.0 {
                                    1.0
                                } else if *xv < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::Softmax { input, axis } => {
                    if self.flows(input) {
                        let ga = self.softmax_backward(i, &g, axis, false);
                        self.stash(&mut scratch, input, ga);
                    }
                }
                Op::LogSoftmax { input, axis } => {
                    if self.flows(input) {
                        let ga = self.softmax_backward(i, &g, axis, true);
                        self.stash(&mut scratch, input, ga);
                    }
                }
                Op::Sum(a) => {
                    if self.flows(a) {
                        let n = self.nodes[a.0].tensor.len();
                        self.stash(&mut scratch, a, vec![g[0]; n]);
                    }
                }
                Op::Mean(a) => {
                    if self.flows(a) {
                        let n = self.nodes[a.0].tensor.len();
                        self.stash(&mut scratch, a, vec![g[0] / n as f64; n]);
                    }
                }
                Op::MaxAll(a) => {
                    if self.flows(a) {
                        let x = self.nodes[a.0].tensor.data();
                        let idx = kernels::argmax(x);
                        let mut ga = vec![0.0; x.len()];
                        ga[idx] = g[0];
                        self.stash(&mut scratch, a, ga);
                    }
                }
                Op::SelectRow { input, row } => {
                    if self.flows(input) {
                        let t = &self.nodes[input.0].tensor;
                        let c = t.shape()[1];
                        let mut ga = vec![0.0; t.len()];
                        ga[row * c..(row + 1) * c].copy_from_slice(&g);
                        self.stash(&mut scratch, input, ga);
                    }
                }
                Op::Select { input, index } => {
                    if self.flows(input) {
                        let n = self.nodes[input.0].tensor.len();
                        let mut ga = vec![0.0; n];
                        ga[index] = g[0];
                        self.stash(&mut scratch, input, ga);
                    }
                }
                Op::Gather { input, ref indices } => {
                    if self.flows(input) {
                        let n = self.nodes[input.0].tensor.len();
                        let mut ga = vec![0.0; n];
                        for (&idx, &gv) in indices.iter().zip(&g) {
                            ga[idx] += gv;
                        }
                        self.stash(&mut scratch, input, ga);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].tensor.len();
                    if self.flows(a) {
                        self.stash(&mut scratch, a, g[..na].to_vec());
                    }
                    if self.flows(b) {
                        self.stash(&mut scratch, b, g[na..].to_vec());
                    }
                }
                Op::Reshape(a) => {
                    if self.flows(a) {
                        self.stash(&mut scratch, a, g);
                    }
                }
                Op::ToImage(w) => {
                    if self.flows(w) {
                        let x = self.nodes[w.0].tensor.data();
                        let ga = g
                            .iter()
                            .zip(x)
                            .map(|(gv, wv)| {
                                let t = wv.tanh();
                                gv * 0.5 * (1.0 - t * t)
                            })
                            .collect();
                        self.stash(&mut scratch, w, ga);
                    }
                }
            }
        }
        Ok(())
    }

    fn flows(&self, id: NodeId) -> bool {
        self.nodes[id.0].tensor.needs_grad()
    }

    fn stash(&self, scratch: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
        match &mut scratch[id.0] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Route a gradient to one side of a broadcast binary op, collapsing to a
    /// scalar sum when that side was the scalar operand.
    fn stash_broadcast(&self, scratch: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64], sign: f64) {
        if !self.flows(id) {
            return;
        }
        let n = self.nodes[id.0].tensor.len();
        let delta = if n == g.len() {
            g.iter().map(|v| v * sign).collect()
        } else {
            debug_assert_eq!(n, 1);
            vec![g.iter().sum::<f64>() * sign]
        };
        self.stash(scratch, id, delta);
    }

    /// Gradient factor for one operand of `mul`, handling scalar broadcast.
    fn mul_grad(&self, g: &[f64], other: NodeId, target_len: usize) -> Vec<f64> {
        let o = self.nodes[other.0].tensor.data();
        if target_len == g.len() {
            if o.len() == 1 {
                g.iter().map(|gv| gv * o[0]).collect()
            } else {
                g.iter().zip(o).map(|(gv, ov)| gv * ov).collect()
            }
        } else {
            // the target was the scalar operand
            debug_assert_eq!(target_len, 1);
            vec![g.iter().zip(o).map(|(gv, ov)| gv * ov).sum()]
        }
    }

    fn softmax_backward(&self, node: usize, g: &[f64], axis: usize, log_variant: bool) -> Vec<f64> {
        let t = &self.nodes[node].tensor;
        let shape = t.shape();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let y = t.data();
        let mut ga = vec![0.0; y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                if log_variant {
                    // gx = g - softmax(x) * Σ g  (softmax = exp(log_softmax))
                    let gsum: f64 = (0..axis_len).map(|j| g[base + j * inner]).sum();
                    for j in 0..axis_len {
                        let idx = base + j * inner;
                        ga[idx] = g[idx] - y[idx].exp() * gsum;
                    }
                } else {
                    // gx = y ⊙ (g - Σ g⊙y)
                    let dot: f64 = (0..axis_len)
                        .map(|j| {
                            let idx = base + j * inner;
                            g[idx] * y[idx]
                        })
                        .sum();
                    for j in 0..axis_len {
                        let idx = base + j * inner;
                        ga[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
        }
        ga
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{finite_diff_grad, rel_error, FD_STEP};
    use proptest::prelude::*;

    fn t1(data: &[f64]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let eye = tape.leaf(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.leaf(t2(2, 1, &[1.0, 1.0]));
        let c = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 3, &[0.0; 6]));
        let b = tape.leaf(t2(2, 2, &[0.0; 4]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // sum(A·B) for random 3x4 · 4x2; d/dA checked against central diffs.
        let mut rng_vals = [
            0.37, -0.81, 0.44, 1.2, -0.3, 0.9, 0.05, -1.7, 0.6, 0.21, -0.5, 1.1,
        ];
        rng_vals[0] += 0.001;
        let b_vals = [0.3, -0.4, 1.5, 0.2, -0.9, 0.7, 0.1, 0.8];

        let analytic = {
            let mut tape = Tape::new();
            let a = tape.leaf(t2(3, 4, &rng_vals).requires_grad(true));
            let b = tape.leaf(t2(4, 2, &b_vals).requires_grad(true));
            let c = tape.matmul(a, b).unwrap();
            let loss = tape.sum(c);
            tape.backward(loss).unwrap();
            (
                tape.grad(a).unwrap().to_vec(),
                tape.grad(b).unwrap().to_vec(),
            )
        };

        let fd_a = finite_diff_grad(&rng_vals, FD_STEP, |vals| {
            let mut tape = Tape::new();
            let a = tape.leaf(t2(3, 4, vals));
            let b = tape.leaf(t2(4, 2, &b_vals));
            let c = tape.matmul(a, b).unwrap();
            let loss = tape.sum(c);
            tape.value(loss).item().unwrap()
        });
        let fd_b = finite_diff_grad(&b_vals, FD_STEP, |vals| {
            let mut tape = Tape::new();
            let a = tape.leaf(t2(3, 4, &rng_vals));
            let b = tape.leaf(t2(4, 2, vals));
            let c = tape.matmul(a, b).unwrap();
            let loss = tape.sum(c);
            tape.value(loss).item().unwrap()
        });
        assert!(rel_error(&analytic.0, &fd_a) < 1e-4);
        assert!(rel_error(&analytic.1, &fd_b) < 1e-4);
    }

    #[test]
    fn tanh_of_zero_is_zero_and_sigmoid_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.0]));
        let th = tape.tanh(x);
        let sg = tape.sigmoid(x);
        assert_eq!(tape.value(th).data(), &[0.0]);
        assert_eq!(tape.value(sg).data(), &[0.5]);
    }

    #[test]
    fn tanh_gradient_at_0_3_matches_finite_differences() {
        let x0 = [0.3];
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&x0).requires_grad(true));
        let y = tape.tanh(x);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();
        let fd = finite_diff_grad(&x0, FD_STEP, |v| v[0].tanh());
        assert!(rel_error(&analytic, &fd) < 1e-5);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 0.0]));
        assert!(matches!(tape.log(x).unwrap_err(), Error::Domain(_)));
        let y = tape.leaf(t1(&[-2.0]));
        assert!(matches!(tape.log(y).unwrap_err(), Error::Domain(_)));
    }

    #[test]
    fn softmax_uniform_and_hand_value() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[0.0, 0.0]));
        let s = tape.softmax(a, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let b = tape.leaf(t1(&[2.0, 0.0]));
        let s = tape.softmax(b, 0).unwrap();
        // e² / (e² + 1), evaluated directly
        let expect = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((tape.value(s).data()[0] - 0.8808).abs() < 1e-4);
        assert!((tape.value(s).data()[1] - 0.1192).abs() < 1e-4);
        assert!((tape.value(s).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_matrix_axis() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let s = tape.softmax(a, 1).unwrap();
        let d = tape.value(s).data();
        assert!(((d[0] + d[1] + d[2]) - 1.0).abs() < 1e-6);
        assert!(((d[3] + d[4] + d[5]) - 1.0).abs() < 1e-6);
        // column softmax as well
        let s0 = tape.softmax(a, 0).unwrap();
        let d0 = tape.value(s0).data();
        assert!(((d0[0] + d0[3]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[1.0, -2.0, 0.5]));
        let ls = tape.log_softmax(a, 0).unwrap();
        let s = tape.softmax(a, 0).unwrap();
        for (lv, sv) in tape.value(ls).data().iter().zip(tape.value(s).data()) {
            assert!((lv - sv.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0, 3.0]).requires_grad(true));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.5, -2.0]).requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, -4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]).requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        assert!(matches!(tape.backward(y).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn double_backward_without_zeroing_doubles_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.7, -0.3, 1.1]).requires_grad(true));
        let y = tape.tanh(x);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap().to_vec();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(*b, 2.0 * *a);
        }
        tape.zero_grads();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[2.0]).requires_grad(true));
        let d = tape.detach(x);
        let y = tape.mul(x, d).unwrap(); // y = x · detach(x); dy/dx = detach(x) = 2
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0, 3.0]).requires_grad(true));
        let g = tape.gather(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(g).data(), &[3.0, 1.0, 3.0]);
        let y = tape.leaf(t1(&[5.0]).requires_grad(true));
        let c = tape.concat(g, y).unwrap();
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 2.0]);
        assert_eq!(tape.grad(y).unwrap(), &[1.0]);
    }

    #[test]
    fn select_row_and_select_bounds_checked() {
        let mut tape = Tape::new();
        let m = tape.leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert!(tape.select_row(m, 2).is_err());
        let r = tape.select_row(m, 1).unwrap();
        assert_eq!(tape.value(r).data(), &[4.0, 5.0, 6.0]);
        assert!(tape.select(r, 3).is_err());
        let s = tape.select(r, 2).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 6.0);
    }

    #[test]
    fn forward_is_bit_identical_across_runs() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(t1(&[0.1, -0.9, 2.3, 0.777]));
            let m = tape.leaf(t2(4, 3, &[0.3; 12]));
            let y = tape.vecmat(x, m).unwrap();
            let z = tape.tanh(y);
            let s = tape.softmax(z, 0).unwrap();
            tape.value(s).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    // Gradient checks for the remaining differentiable ops, against the
    // finite-difference oracle on fixed inputs.
    #[test]
    fn unary_op_gradients_match_finite_differences() {
        type Build = fn(&mut Tape, NodeId) -> NodeId;
        let cases: Vec<(Build, Vec<f64>)> = vec![
            (|t, x| t.tanh(x), vec![0.3, -1.2, 0.01]),
            (|t, x| t.sigmoid(x), vec![0.5, -0.5, 2.0]),
            (|t, x| t.exp(x).unwrap(), vec![0.1, -1.0, 1.5]),
            (|t, x| t.log(x).unwrap(), vec![0.4, 1.7, 3.0]),
            (|t, x| t.relu(x), vec![0.6, -0.7, 1.3]),
            (|t, x| t.sqrt(x).unwrap(), vec![0.25, 4.0, 0.9]),
            (|t, x| t.abs(x), vec![0.5, -1.5, 2.5]),
            (|t, x| t.neg(x), vec![1.0, -2.0, 0.5]),
            (|t, x| t.mul_scalar(x, 2.5), vec![1.0, -2.0, 0.5]),
            (|t, x| t.add_scalar(x, -1.5), vec![1.0, -2.0, 0.5]),
            (|t, x| t.softmax(x, 0).unwrap(), vec![0.2, -0.8, 1.4]),
            (|t, x| t.log_softmax(x, 0).unwrap(), vec![0.2, -0.8, 1.4]),
            (|t, x| t.to_image(x), vec![0.2, -2.0, 5.0]),
            (|t, x| t.max_all(x), vec![0.2, 1.9, -0.4]),
        ];
        for (build, x0) in cases {
            let mut tape = Tape::new();
            let x = tape.leaf(t1(&x0).requires_grad(true));
            let y = build(&mut tape, x);
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
            let analytic = tape.grad(x).unwrap().to_vec();
            let fd = finite_diff_grad(&x0, FD_STEP, |vals| {
                let mut tape = Tape::new();
                let x = tape.leaf(t1(vals));
                let y = build(&mut tape, x);
                let loss = tape.sum(y);
                tape.value(loss).item().unwrap()
            });
            assert!(
                rel_error(&analytic, &fd) < 1e-4,
                "gradient mismatch: analytic {analytic:?} vs fd {fd:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(vals in proptest::collection::vec(-8.0f64..8.0, 2..10), c in -5.0f64..5.0) {
            let mut tape = Tape::new();
            let x = tape.leaf(t1(&vals));
            let s1 = tape.softmax(x, 0).unwrap();
            let shifted = tape.add_scalar(x, c);
            let s2 = tape.softmax(shifted, 0).unwrap();
            for (a, b) in tape.value(s1).data().iter().zip(tape.value(s2).data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_outputs_are_a_distribution(vals in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
            let mut tape = Tape::new();
            let x = tape.leaf(t1(&vals));
            let s = tape.softmax(x, 0).unwrap();
            let d = tape.value(s).data();
            prop_assert!(d.iter().all(|&p| p >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
