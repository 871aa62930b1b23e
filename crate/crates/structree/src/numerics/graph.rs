use super::tensor::{shape_str, Tensor};
use super::NumericsError;

/// Handle to a value in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// The closed set of differentiable operations. Each variant's backward rule
/// is hand-derived; there is no general-purpose tape beyond this enum.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// w (m x n) times x (n x 1).
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Elementwise sum over operands in ascending list order.
    Sum { xs: Vec<NodeId> },
    /// Elementwise mean over operands in ascending list order.
    Mean { xs: Vec<NodeId> },
    Hadamard { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Scale { x: NodeId, k: f64 },
    /// Cross-entropy of softmax(logits) against a one-hot label; the scalar
    /// loss is the node value, the probabilities are cached for the backward
    /// rule (grad = probs - onehot) and for prediction.
    SoftmaxXent { logits: NodeId, label: usize, probs: Vec<f64> },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Tensor,
}

/// Expression graph for one forward/backward pass.
///
/// Values are computed eagerly as nodes are appended, so node order is a
/// topological order and `backward` can walk it in reverse. Every node keeps
/// a gradient accumulator of the same shape; `backward` adds into it, so two
/// backward calls without `reset_grads` double every entry exactly.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Graph { nodes: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.shape(), (1, 1));
        self.nodes[id.0].value.data()[0]
    }

    pub fn reset_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad.fill(0.0);
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a constant or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, NumericsError> {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        if xt.cols() != 1 || wt.cols() != xt.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec",
                lhs: shape_str(wt),
                rhs: shape_str(xt),
            });
        }
        let (m, n) = wt.shape();
        let mut out = Tensor::zeros(m, 1);
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..n {
                acc += wt.get(r, c) * xt.get(c, 0);
            }
            out.set(r, 0, acc);
        }
        Ok(self.push(Op::MatVec { w, x }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !at.same_shape(bt) {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: shape_str(at),
                rhs: shape_str(bt),
            });
        }
        let mut out = at.clone();
        for (o, v) in out.data_mut().iter_mut().zip(bt.data().iter()) {
            *o += v;
        }
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericsError> {
        let out = self.reduce_values("sum", xs)?;
        Ok(self.push(Op::Sum { xs: xs.to_vec() }, out))
    }

    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericsError> {
        let mut out = self.reduce_values("mean_rows", xs)?;
        let k = 1.0 / xs.len() as f64;
        for v in out.data_mut().iter_mut() {
            *v *= k;
        }
        Ok(self.push(Op::Mean { xs: xs.to_vec() }, out))
    }

    fn reduce_values(&self, op: &'static str, xs: &[NodeId]) -> Result<Tensor, NumericsError> {
        if xs.is_empty() {
            return Err(NumericsError::EmptyOperands { op });
        }
        let first = &self.nodes[xs[0].0].value;
        let mut out = first.clone();
        for id in &xs[1..] {
            let t = &self.nodes[id.0].value;
            if !t.same_shape(first) {
                return Err(NumericsError::ShapeMismatch {
                    op,
                    lhs: shape_str(first),
                    rhs: shape_str(t),
                });
            }
            for (o, v) in out.data_mut().iter_mut().zip(t.data().iter()) {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !at.same_shape(bt) {
            return Err(NumericsError::ShapeMismatch {
                op: "hadamard",
                lhs: shape_str(at),
                rhs: shape_str(bt),
            });
        }
        let mut out = at.clone();
        for (o, v) in out.data_mut().iter_mut().zip(bt.data().iter()) {
            *o *= v;
        }
        Ok(self.push(Op::Hadamard { a, b }, out))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut().iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.push(Op::Sigmoid { x }, out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut().iter_mut() {
            *v = v.tanh();
        }
        self.push(Op::Tanh { x }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut().iter_mut() {
            *v = v.max(0.0);
        }
        self.push(Op::Relu { x }, out)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut().iter_mut() {
            *v *= k;
        }
        self.push(Op::Scale { x, k }, out)
    }

    /// Softmax cross-entropy against label `label`, computed with max-shift
    /// so extreme logits stay finite. Returns the scalar loss node and the
    /// softmax probabilities.
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<(NodeId, Vec<f64>), NumericsError> {
        let lt = &self.nodes[logits.0].value;
        if lt.cols() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_xent",
                lhs: shape_str(lt),
                rhs: "n x 1".to_string(),
            });
        }
        if label >= lt.rows() {
            return Err(NumericsError::LabelOutOfRange { label, classes: lt.rows() });
        }
        if !lt.is_finite() {
            return Err(NumericsError::NonFinite { context: "softmax_xent logits".to_string() });
        }
        let raw = lt.data();
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; raw.len()];
        let mut denom = 0.0;
        for (p, v) in probs.iter_mut().zip(raw.iter()) {
            *p = (v - max).exp();
            denom += *p;
        }
        for p in probs.iter_mut() {
            *p /= denom;
        }
        // -ln p[label] in log-sum-exp form; never takes ln of a rounded-to-zero prob.
        let loss = denom.ln() - (raw[label] - max);
        let id = self.push(Op::SoftmaxXent { logits, label, probs: probs.clone() }, Tensor::scalar(loss));
        Ok((id, probs))
    }

    /// Accumulate d(seed)/d(node) into every node's grad slot. `seed` must be
    /// scalar. Adjoints are built in a scratch buffer per call, then added to
    /// the persistent accumulators.
    pub fn backward(&mut self, seed: NodeId) -> Result<(), NumericsError> {
        if self.nodes[seed.0].value.shape() != (1, 1) {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                lhs: shape_str(&self.nodes[seed.0].value),
                rhs: "1x1".to_string(),
            });
        }
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[seed.0][0] = 1.0;
        let mut touched = vec![false; self.nodes.len()];
        touched[seed.0] = true;

        for i in (0..=seed.0).rev() {
            if !touched[i] {
                continue;
            }
            // Take this node's adjoint out so downstream slots can be borrowed mutably.
            let g = std::mem::take(&mut adj[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (m, n) = wt.shape();
                    {
                        let gw = &mut adj[w.0];
                        for r in 0..m {
                            for c in 0..n {
                                gw[r * n + c] += g[r] * xt.get(c, 0);
                            }
                        }
                    }
                    {
                        let gx = &mut adj[x.0];
                        for c in 0..n {
                            let mut acc = 0.0;
                            for r in 0..m {
                                acc += wt.get(r, c) * g[r];
                            }
                            gx[c] += acc;
                        }
                    }
                    touched[w.0] = true;
                    touched[x.0] = true;
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (o, v) in adj[a.0].iter_mut().zip(g.iter()) {
                        *o += v;
                    }
                    for (o, v) in adj[b.0].iter_mut().zip(g.iter()) {
                        *o += v;
                    }
                    touched[a.0] = true;
                    touched[b.0] = true;
                }
                Op::Sum { xs } => {
                    for id in xs.clone() {
                        for (o, v) in adj[id.0].iter_mut().zip(g.iter()) {
                            *o += v;
                        }
                        touched[id.0] = true;
                    }
                }
                Op::Mean { xs } => {
                    let k = 1.0 / xs.len() as f64;
                    for id in xs.clone() {
                        for (o, v) in adj[id.0].iter_mut().zip(g.iter()) {
                            *o += k * v;
                        }
                        touched[id.0] = true;
                    }
                }
                Op::Hadamard { a, b } => {
                    let (a, b) = (*a, *b);
                    for idx in 0..g.len() {
                        adj[a.0][idx] += g[idx] * self.nodes[b.0].value.data()[idx];
                    }
                    for idx in 0..g.len() {
                        adj[b.0][idx] += g[idx] * self.nodes[a.0].value.data()[idx];
                    }
                    touched[a.0] = true;
                    touched[b.0] = true;
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.data();
                    for idx in 0..g.len() {
                        adj[x.0][idx] += g[idx] * y[idx] * (1.0 - y[idx]);
                    }
                    touched[x.0] = true;
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.data();
                    for idx in 0..g.len() {
                        adj[x.0][idx] += g[idx] * (1.0 - y[idx] * y[idx]);
                    }
                    touched[x.0] = true;
                }
                Op::Relu { x } => {
                    let x = *x;
                    // Subgradient 0 at the kink.
                    for idx in 0..g.len() {
                        if self.nodes[x.0].value.data()[idx] > 0.0 {
                            adj[x.0][idx] += g[idx];
                        }
                    }
                    touched[x.0] = true;
                }
                Op::Scale { x, k } => {
                    let (x, k) = (*x, *k);
                    for (o, v) in adj[x.0].iter_mut().zip(g.iter()) {
                        *o += k * v;
                    }
                    touched[x.0] = true;
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let (logits, label) = (*logits, *label);
                    let probs = probs.clone();
                    let gl = &mut adj[logits.0];
                    for (idx, p) in probs.iter().enumerate() {
                        let onehot = if idx == label { 1.0 } else { 0.0 };
                        gl[idx] += g[0] * (p - onehot);
                    }
                    touched[logits.0] = true;
                }
            }
            adj[i] = g;
        }

        for (node, a) in self.nodes.iter_mut().zip(adj.iter()) {
            for (slot, v) in node.grad.data_mut().iter_mut().zip(a.iter()) {
                *slot += v;
            }
        }
        Ok(())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_from_seed, uniform_tensor};

    /// Independent triple-loop product, kept free of the Graph code path.
    fn matvec_oracle(w: &Tensor, x: &Tensor) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                out[r] += w.get(r, c) * x.get(c, 0);
            }
        }
        out
    }

    #[test]
    fn matvec_matches_triple_loop() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let w = uniform_tensor(4, 3, 1.0, &mut rng);
            let x = uniform_tensor(3, 1, 1.0, &mut rng);
            let mut g = Graph::new();
            let wi = g.leaf(w.clone());
            let xi = g.leaf(x.clone());
            let y = g.matvec(wi, xi).unwrap();
            assert_eq!(g.value(y).data(), matvec_oracle(&w, &x).as_slice());
        }
    }

    #[test]
    fn matvec_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(4, 3));
        let x = g.leaf(Tensor::zeros(2, 1));
        let err = g.matvec(w, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("4x3") && msg.contains("2x1"), "unhelpful message: {msg}");
    }

    #[test]
    fn softmax_probs_sum_to_one() {
        let mut rng = rng_from_seed(7);
        for _ in 0..50 {
            let logits = uniform_tensor(6, 1, 30.0, &mut rng);
            let mut g = Graph::new();
            let l = g.leaf(logits);
            let (_, probs) = g.softmax_xent(l, 0).unwrap();
            let s: f64 = probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "prob mass {s}");
        }
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::vector(vec![1000.0, 0.0]));
        let (loss, probs) = g.softmax_xent(l, 0).unwrap();
        assert_eq!(g.scalar_value(loss), 0.0);
        assert_eq!(probs[0], 1.0);

        let l2 = g.leaf(Tensor::vector(vec![-1000.0, 0.0]));
        let (loss2, _) = g.softmax_xent(l2, 0).unwrap();
        assert_eq!(g.scalar_value(loss2), 1000.0);
    }

    #[test]
    fn softmax_rejects_bad_label_and_nonfinite() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(g.softmax_xent(l, 2), Err(NumericsError::LabelOutOfRange { .. })));
        let bad = g.leaf(Tensor::vector(vec![f64::NAN, 1.0]));
        assert!(matches!(g.softmax_xent(bad, 0), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn backward_twice_doubles_grads_exactly() {
        let mut rng = rng_from_seed(3);
        let w = uniform_tensor(3, 3, 1.0, &mut rng);
        let x = uniform_tensor(3, 1, 1.0, &mut rng);
        let mut g = Graph::new();
        let wi = g.leaf(w);
        let xi = g.leaf(x);
        let h = g.matvec(wi, xi).unwrap();
        let s = g.sigmoid(h);
        let (loss, _) = g.softmax_xent(s, 1).unwrap();

        g.backward(loss).unwrap();
        let once = g.grad(wi).clone();
        g.backward(loss).unwrap();
        let twice = g.grad(wi).clone();
        let doubled: Vec<f64> = once.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(twice.data(), doubled.as_slice());

        g.reset_grads();
        assert!(g.grad(wi).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn relu_subgradient_is_zero_at_kink() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, -1.0, 2.0]));
        let r = g.relu(x);
        let w = g.leaf(Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]));
        let y = g.matvec(w, r).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_backward_splits_evenly() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0]));
        let b = g.leaf(Tensor::vector(vec![5.0]));
        let m = g.mean(&[a, b]).unwrap();
        assert_eq!(g.value(m).data(), &[3.0]);
        g.backward(m).unwrap();
        assert_eq!(g.grad(a).data(), &[0.5]);
        assert_eq!(g.grad(b).data(), &[0.5]);
    }

    #[test]
    fn empty_reduction_is_an_error() {
        let mut g = Graph::new();
        assert!(matches!(g.sum(&[]), Err(NumericsError::EmptyOperands { .. })));
    }
}
