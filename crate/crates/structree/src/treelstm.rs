//! Child-sum tree LSTM laid over a document tree.
//!
//! Every node j runs one LSTM cell. Non-leaf nodes sum their children's
//! hidden states into h~, gate each child's memory with its own forget gate,
//! and add the gated memories into their own cell state:
//!
//!   i = sigmoid(W_i x + U_i h~ + b_i)        o, u analogous (u through tanh)
//!   f_k = sigmoid(W_f x + U_f h_k + b_f)     one per child k
//!   c = i * u + sum_k f_k * c_k
//!   h = o * tanh(c)
//!
//! Leaves have no children, so their cell drops every U term. What x is at a
//! non-leaf is the variant's choice: the zero vector (its W terms vanish and
//! are skipped), or the average of the children's inputs, taken bottom-up.

use serde::{Deserialize, Serialize};

use crate::doctree::{DocNode, DocTree};
use crate::numerics::{
    uniform_tensor, Graph, NodeId, NumericsError, ParamTensors, Rng, Tensor,
};

/// Input vector policy for non-leaf nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ZeroVectors,
    HierarchicalAverage,
}

/// One gate: input weights, recurrent weights, and a bias for each side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b_w: Tensor,
    pub b_u: Tensor,
}

impl GateParams {
    fn init(e: usize, h: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        GateParams {
            w: uniform_tensor(h, e, bound, rng),
            u: uniform_tensor(h, h, bound, rng),
            b_w: uniform_tensor(h, 1, bound, rng),
            b_u: uniform_tensor(h, 1, bound, rng),
        }
    }
}

/// Shared parameter set for the tree LSTM and the sequential LSTM baseline:
/// four gates plus the output classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub update: GateParams,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl LstmParams {
    /// Seeded init, every entry uniform in (-1/sqrt(h), +1/sqrt(h)).
    pub fn init(e: usize, h: usize, l: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        LstmParams {
            input: GateParams::init(e, h, rng),
            forget: GateParams::init(e, h, rng),
            output: GateParams::init(e, h, rng),
            update: GateParams::init(e, h, rng),
            w_out: uniform_tensor(l, h, bound, rng),
            b_out: uniform_tensor(l, 1, bound, rng),
        }
    }

    /// (embedding, hidden, label) dimensions, read back from the shapes.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.input.w.cols(), self.input.w.rows(), self.w_out.rows())
    }
}

impl ParamTensors for LstmParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.input.w, &self.input.u, &self.input.b_w, &self.input.b_u,
            &self.forget.w, &self.forget.u, &self.forget.b_w, &self.forget.b_u,
            &self.output.w, &self.output.u, &self.output.b_w, &self.output.b_u,
            &self.update.w, &self.update.u, &self.update.b_w, &self.update.b_u,
            &self.w_out, &self.b_out,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.input.w, &mut self.input.u, &mut self.input.b_w, &mut self.input.b_u,
            &mut self.forget.w, &mut self.forget.u, &mut self.forget.b_w, &mut self.forget.b_u,
            &mut self.output.w, &mut self.output.u, &mut self.output.b_w, &mut self.output.b_u,
            &mut self.update.w, &mut self.update.u, &mut self.update.b_w, &mut self.update.b_u,
            &mut self.w_out, &mut self.b_out,
        ]
    }

    fn param_names(&self) -> Vec<String> {
        ["w_i", "u_i", "bw_i", "bu_i", "w_f", "u_f", "bw_f", "bu_f", "w_o", "u_o", "bw_o", "bu_o",
         "w_u", "u_u", "bw_u", "bu_u", "w_out", "b_out"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

#[derive(Clone, Copy)]
pub struct GateIds {
    pub w: NodeId,
    pub u: NodeId,
    pub b_w: NodeId,
    pub b_u: NodeId,
}

/// Graph leaves holding one parameter set, in [`ParamTensors`] order.
#[derive(Clone, Copy)]
pub struct LstmParamIds {
    pub input: GateIds,
    pub forget: GateIds,
    pub output: GateIds,
    pub update: GateIds,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl LstmParamIds {
    pub fn insert(g: &mut Graph, p: &LstmParams) -> Self {
        let gate = |g: &mut Graph, gp: &GateParams| GateIds {
            w: g.leaf(gp.w.clone()),
            u: g.leaf(gp.u.clone()),
            b_w: g.leaf(gp.b_w.clone()),
            b_u: g.leaf(gp.b_u.clone()),
        };
        LstmParamIds {
            input: gate(g, &p.input),
            forget: gate(g, &p.forget),
            output: gate(g, &p.output),
            update: gate(g, &p.update),
            w_out: g.leaf(p.w_out.clone()),
            b_out: g.leaf(p.b_out.clone()),
        }
    }

    fn in_order(&self) -> [NodeId; 18] {
        [
            self.input.w, self.input.u, self.input.b_w, self.input.b_u,
            self.forget.w, self.forget.u, self.forget.b_w, self.forget.b_u,
            self.output.w, self.output.u, self.output.b_w, self.output.b_u,
            self.update.w, self.update.u, self.update.b_w, self.update.b_u,
            self.w_out, self.b_out,
        ]
    }

    /// Accumulated gradients, aligned with [`ParamTensors`] order.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.in_order().iter().map(|id| g.grad(*id).clone()).collect()
    }
}

/// Cell outputs for one tree node, as graph handles.
#[derive(Clone, Debug)]
pub struct NodeTrace {
    pub h: NodeId,
    pub c: NodeId,
    /// Forget gate activations, one per child in child order.
    pub forget: Vec<NodeId>,
}

/// Gate preactivation W x + U h + b_w + b_u with absent terms skipped.
/// Skipping a term equals feeding it a zero vector, without the wasted work.
fn gate_preact(
    g: &mut Graph,
    gate: &GateIds,
    x: Option<NodeId>,
    h: Option<NodeId>,
) -> Result<NodeId, NumericsError> {
    let mut acc: Option<NodeId> = None;
    if let Some(x) = x {
        acc = Some(g.matvec(gate.w, x)?);
    }
    if let Some(h) = h {
        let uh = g.matvec(gate.u, h)?;
        acc = Some(match acc {
            Some(a) => g.add(a, uh)?,
            None => uh,
        });
    }
    let with_bw = match acc {
        Some(a) => g.add(a, gate.b_w)?,
        None => gate.b_w,
    };
    g.add(with_bw, gate.b_u)
}

/// One child-sum cell. `x` is the node's input vector (absent at non-leaves
/// under the zero-vector variant), `children` the already-computed child
/// cells in child order.
pub fn cell_forward(
    g: &mut Graph,
    ids: &LstmParamIds,
    x: Option<NodeId>,
    children: &[NodeTrace],
) -> Result<NodeTrace, NumericsError> {
    let hsum = if children.is_empty() {
        None
    } else {
        let hs: Vec<NodeId> = children.iter().map(|c| c.h).collect();
        Some(g.sum(&hs)?)
    };

    let i_pre = gate_preact(g, &ids.input, x, hsum)?;
    let i = g.sigmoid(i_pre);
    let o_pre = gate_preact(g, &ids.output, x, hsum)?;
    let o = g.sigmoid(o_pre);
    let u_pre = gate_preact(g, &ids.update, x, hsum)?;
    let u = g.tanh(u_pre);

    let mut forget = Vec::with_capacity(children.len());
    let mut c_terms = Vec::with_capacity(children.len() + 1);
    c_terms.push(g.hadamard(i, u)?);
    for child in children {
        let f_pre = gate_preact(g, &ids.forget, x, Some(child.h))?;
        let f = g.sigmoid(f_pre);
        forget.push(f);
        c_terms.push(g.hadamard(f, child.c)?);
    }
    let c = if c_terms.len() == 1 { c_terms[0] } else { g.sum(&c_terms)? };
    let tc = g.tanh(c);
    let h = g.hadamard(o, tc)?;
    Ok(NodeTrace { h, c, forget })
}

/// Per-node input vectors under a variant, indexed by node id. `None` marks
/// a node whose input is the zero vector (its W terms are skipped; forcing
/// an explicit zero vector instead reproduces the same outputs bit for bit).
pub fn node_inputs(
    tree: &DocTree,
    variant: Variant,
    leaf_vecs: &[(usize, Tensor)],
) -> Result<Vec<Option<Tensor>>, NumericsError> {
    let n = tree.node_count();
    let mut inputs: Vec<Option<Tensor>> = vec![None; n];
    for (id, v) in leaf_vecs {
        if *id >= n {
            return Err(NumericsError::InvalidArgument {
                what: format!("leaf vector for id {id} outside tree of {n} nodes"),
            });
        }
        inputs[*id] = Some(v.clone());
    }
    for leaf in tree.leaves() {
        if inputs[leaf.id].is_none() {
            return Err(NumericsError::InvalidArgument {
                what: format!("no embedding supplied for leaf {}", leaf.id),
            });
        }
    }
    if variant == Variant::HierarchicalAverage {
        fn average_up(node: &DocNode, inputs: &mut Vec<Option<Tensor>>) {
            if node.is_leaf() {
                return;
            }
            for c in &node.children {
                average_up(c, inputs);
            }
            let parts: Vec<&Tensor> =
                node.children.iter().map(|c| inputs[c.id].as_ref().expect("children filled first")).collect();
            inputs[node.id] = Some(Tensor::mean_of(&parts));
        }
        average_up(&tree.root, &mut inputs);
    }
    Ok(inputs)
}

/// Run the cell over every node bottom-up (children before parents, in child
/// order). Returns one trace per node, indexed by node id.
pub fn encode_tree(
    g: &mut Graph,
    tree: &DocTree,
    inputs: &[Option<Tensor>],
    ids: &LstmParamIds,
) -> Result<Vec<NodeTrace>, NumericsError> {
    let n = tree.node_count();
    if inputs.len() != n {
        return Err(NumericsError::InvalidArgument {
            what: format!("{} inputs for a tree of {n} nodes", inputs.len()),
        });
    }
    let mut traces: Vec<Option<NodeTrace>> = vec![None; n];
    fn walk(
        g: &mut Graph,
        node: &DocNode,
        inputs: &[Option<Tensor>],
        ids: &LstmParamIds,
        traces: &mut Vec<Option<NodeTrace>>,
    ) -> Result<(), NumericsError> {
        let mut child_traces = Vec::with_capacity(node.children.len());
        for c in &node.children {
            walk(g, c, inputs, ids, traces)?;
            child_traces.push(traces[c.id].clone().expect("child encoded"));
        }
        let x = inputs[node.id].as_ref().map(|t| g.leaf(t.clone()));
        traces[node.id] = Some(cell_forward(g, ids, x, &child_traces)?);
        Ok(())
    }
    walk(g, &tree.root, inputs, ids, &mut traces)?;
    Ok(traces.into_iter().map(|t| t.expect("all nodes encoded")).collect())
}

/// Affine classifier over a hidden state plus softmax cross-entropy.
/// Returns the scalar loss node and the class probabilities.
pub fn classify(
    g: &mut Graph,
    h: NodeId,
    ids: &LstmParamIds,
    label: usize,
) -> Result<(NodeId, Vec<f64>), NumericsError> {
    let wh = g.matvec(ids.w_out, h)?;
    let logits = g.add(wh, ids.b_out)?;
    g.softmax_xent(logits, label)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    TreeLstm,
    SeqLstm,
    Mlp,
}

/// Closed-form parameter counts; must (and does, see tests) equal the number
/// of floats actually allocated by the corresponding init.
pub fn count_params(kind: ModelKind, e: usize, h: usize, l: usize) -> usize {
    match kind {
        // Four gates, each W (h*e), U (h*h) and two h-sized biases; classifier on top.
        ModelKind::TreeLstm | ModelKind::SeqLstm => 4 * (e * h + h * h + 2 * h) + h * l + l,
        // Two hidden affine layers and the classifier.
        ModelKind::Mlp => e * h + h * h + 2 * h + h * l + l,
    }
}
