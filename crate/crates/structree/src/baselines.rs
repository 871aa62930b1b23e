//! Flat baselines the tree model is judged against: an MLP over a pooled
//! document vector, and a sequential LSTM over the leaves in reading order.
//!
//! The sequential LSTM shares [`LstmParams`] with the tree model. One step is
//! exactly a child-sum cell with a single child (the previous state), so a
//! path-shaped tree and the sequence of its leaves produce the same numbers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::doctree::DocTree;
use crate::numerics::{
    uniform_tensor, Graph, NodeId, NumericsError, ParamTensors, Rng, Tensor,
};
use crate::treelstm::{cell_forward, node_inputs, LstmParamIds, NodeTrace, Variant};

/// How a document is pooled into one vector for the MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Flat mean over all leaf vectors.
    Unweighted,
    /// Bottom-up mean of means, one level at a time.
    Hierarchical,
}

/// Two hidden relu layers and a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl MlpParams {
    pub fn init(e: usize, h: usize, l: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        MlpParams {
            w1: uniform_tensor(h, e, bound, rng),
            b1: uniform_tensor(h, 1, bound, rng),
            w2: uniform_tensor(h, h, bound, rng),
            b2: uniform_tensor(h, 1, bound, rng),
            w_out: uniform_tensor(l, h, bound, rng),
            b_out: uniform_tensor(l, 1, bound, rng),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.cols(), self.w1.rows(), self.w_out.rows())
    }
}

impl ParamTensors for MlpParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w_out, &self.b_out]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w_out, &mut self.b_out]
    }

    fn param_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2", "w_out", "b_out"].iter().map(|s| s.to_string()).collect()
    }
}

/// Graph leaves holding one MLP parameter set, in [`ParamTensors`] order.
#[derive(Clone, Copy)]
pub struct MlpParamIds {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl MlpParamIds {
    pub fn insert(g: &mut Graph, p: &MlpParams) -> Self {
        MlpParamIds {
            w1: g.leaf(p.w1.clone()),
            b1: g.leaf(p.b1.clone()),
            w2: g.leaf(p.w2.clone()),
            b2: g.leaf(p.b2.clone()),
            w_out: g.leaf(p.w_out.clone()),
            b_out: g.leaf(p.b_out.clone()),
        }
    }

    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        [self.w1, self.b1, self.w2, self.b2, self.w_out, self.b_out]
            .iter()
            .map(|id| g.grad(*id).clone())
            .collect()
    }
}

/// MLP forward pass over one document vector. Returns loss and probabilities.
pub fn mlp_forward(
    g: &mut Graph,
    ids: &MlpParamIds,
    x: NodeId,
    label: usize,
) -> Result<(NodeId, Vec<f64>), NumericsError> {
    let z1 = g.matvec(ids.w1, x)?;
    let z1 = g.add(z1, ids.b1)?;
    let a1 = g.relu(z1);
    let z2 = g.matvec(ids.w2, a1)?;
    let z2 = g.add(z2, ids.b2)?;
    let a2 = g.relu(z2);
    let zo = g.matvec(ids.w_out, a2)?;
    let logits = g.add(zo, ids.b_out)?;
    g.softmax_xent(logits, label)
}

/// Flat mean over every leaf vector, leaves in document order.
pub fn doc_vector_unweighted(leaf_vecs: &[(usize, Tensor)]) -> Result<Tensor, NumericsError> {
    if leaf_vecs.is_empty() {
        return Err(NumericsError::EmptyOperands { op: "doc_vector_unweighted".into() });
    }
    let parts: Vec<&Tensor> = leaf_vecs.iter().map(|(_, t)| t).collect();
    Ok(Tensor::mean_of(&parts))
}

/// Mean-of-means up the tree; equals the root input of the hierarchical
/// average variant. Weighs a small section's leaf as much as a big one's.
pub fn doc_vector_hierarchical(
    tree: &DocTree,
    leaf_vecs: &[(usize, Tensor)],
) -> Result<Tensor, NumericsError> {
    let inputs = node_inputs(tree, Variant::HierarchicalAverage, leaf_vecs)?;
    inputs
        .into_iter()
        .next()
        .flatten()
        .ok_or(NumericsError::EmptyOperands { op: "doc_vector_hierarchical".into() })
}

/// Pool one document per the chosen scheme.
pub fn doc_vector(
    tree: &DocTree,
    leaf_vecs: &[(usize, Tensor)],
    pooling: Pooling,
) -> Result<Tensor, NumericsError> {
    match pooling {
        Pooling::Unweighted => doc_vector_unweighted(leaf_vecs),
        Pooling::Hierarchical => doc_vector_hierarchical(tree, leaf_vecs),
    }
}

/// Leaf vectors in reading order (depth-first, left to right), the sequence
/// the flat LSTM consumes.
pub fn leaf_sequence(tree: &DocTree, leaf_vecs: &[(usize, Tensor)]) -> Result<Vec<Tensor>, NumericsError> {
    let by_id: BTreeMap<usize, &Tensor> = leaf_vecs.iter().map(|(id, t)| (*id, t)).collect();
    tree.leaves()
        .iter()
        .map(|leaf| {
            by_id.get(&leaf.id).map(|t| (*t).clone()).ok_or_else(|| {
                NumericsError::InvalidArgument {
                    what: format!("no embedding supplied for leaf {}", leaf.id),
                }
            })
        })
        .collect()
}

/// Run the shared LSTM cell along a sequence, zero initial state. Returns the
/// final step's trace. Step t is a child-sum cell whose only child is step
/// t-1, which is exactly the classic recurrence with the zero terms dropped.
pub fn seq_lstm_forward(
    g: &mut Graph,
    ids: &LstmParamIds,
    xs: &[Tensor],
) -> Result<NodeTrace, NumericsError> {
    if xs.is_empty() {
        return Err(NumericsError::EmptyOperands { op: "seq_lstm_forward".into() });
    }
    let mut state: Option<NodeTrace> = None;
    for x in xs {
        let xi = g.leaf(x.clone());
        let prev: Vec<NodeTrace> = state.take().into_iter().collect();
        state = Some(cell_forward(g, ids, Some(xi), &prev)?);
    }
    Ok(state.expect("nonempty sequence"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doctree::{DocNode, DocTree, LeafGranularity, NodeKind};
    use crate::numerics::{finite_diff_check, rng_from_seed};
    use crate::treelstm::{classify, count_params, encode_tree, LstmParams, ModelKind};

    fn sentence_leaf(text: &str) -> DocNode {
        DocNode {
            id: 0,
            kind: NodeKind::Sentence,
            title: None,
            text: Some(text.to_string()),
            category_id: None,
            vector: None,
            children: Vec::new(),
        }
    }

    fn nested_tree() -> DocTree {
        let para = DocNode {
            id: 0,
            kind: NodeKind::Paragraph,
            title: None,
            text: None,
            category_id: None,
            vector: None,
            children: vec![sentence_leaf("a"), sentence_leaf("b")],
        };
        let root = DocNode {
            id: 0,
            kind: NodeKind::Document,
            title: None,
            text: None,
            category_id: None,
            vector: None,
            children: vec![para, sentence_leaf("c")],
        };
        DocTree::new(0, LeafGranularity::Sentence, root).unwrap()
    }

    #[test]
    fn unweighted_mean_is_flat() {
        let vecs = vec![
            (2, Tensor::vector(vec![0.0, 2.0])),
            (3, Tensor::vector(vec![2.0, 4.0])),
        ];
        let v = doc_vector_unweighted(&vecs).unwrap();
        assert_eq!(v.data(), &[1.0, 3.0]);
        assert!(doc_vector_unweighted(&[]).is_err());
    }

    #[test]
    fn pooling_schemes_disagree_on_nested_trees() {
        let tree = nested_tree();
        let vecs = vec![
            (2, Tensor::vector(vec![0.0, 2.0])),
            (3, Tensor::vector(vec![2.0, 4.0])),
            (4, Tensor::vector(vec![6.0, 8.0])),
        ];
        let flat = doc_vector(&tree, &vecs, Pooling::Unweighted).unwrap();
        let hier = doc_vector(&tree, &vecs, Pooling::Hierarchical).unwrap();
        for (got, want) in flat.data().iter().zip([8.0 / 3.0, 14.0 / 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(hier.data(), &[3.5, 5.5]);
    }

    #[test]
    fn leaf_sequence_reads_depth_first() {
        let tree = nested_tree();
        let vecs = vec![
            (4, Tensor::vector(vec![3.0])),
            (2, Tensor::vector(vec![1.0])),
            (3, Tensor::vector(vec![2.0])),
        ];
        let seq = leaf_sequence(&tree, &vecs).unwrap();
        let flat: Vec<f64> = seq.iter().map(|t| t.get(0, 0)).collect();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn path_tree_and_sequence_agree_bitwise() {
        // The tree encoder over a path and the flat LSTM over the leaf
        // sequence share parameters, so they must produce identical bits.
        let (e, h, l) = (3, 4, 2);
        let mut rng = rng_from_seed(71);
        let p = LstmParams::init(e, h, l, &mut rng);
        for len in 1..=8 {
            let xs: Vec<Tensor> = (0..len).map(|_| uniform_tensor(e, 1, 1.0, &mut rng)).collect();
            let mut node = sentence_leaf("t");
            for _ in 1..len {
                node = DocNode {
                    id: 0,
                    kind: NodeKind::Sentence,
                    title: None,
                    text: None,
                    category_id: None,
                    vector: None,
                    children: vec![node],
                };
            }
            let tree = DocTree::new(0, LeafGranularity::Sentence, node).unwrap();
            let inputs: Vec<Option<Tensor>> =
                (0..len).map(|id| Some(xs[len - 1 - id].clone())).collect();

            let mut g = Graph::new();
            let ids = LstmParamIds::insert(&mut g, &p);
            let traces = encode_tree(&mut g, &tree, &inputs, &ids).unwrap();
            let tree_h = g.value(traces[0].h).clone();

            let mut g2 = Graph::new();
            let ids2 = LstmParamIds::insert(&mut g2, &p);
            let last = seq_lstm_forward(&mut g2, &ids2, &xs).unwrap();
            assert_eq!(g2.value(last.h), &tree_h, "len {len}");
        }
    }

    #[test]
    fn sequence_order_changes_the_outcome() {
        let (e, h, l) = (3, 4, 2);
        let mut rng = rng_from_seed(83);
        let p = LstmParams::init(e, h, l, &mut rng);
        let xs: Vec<Tensor> = (0..4).map(|_| uniform_tensor(e, 1, 1.0, &mut rng)).collect();
        let mut rev = xs.clone();
        rev.reverse();

        let run = |xs: &[Tensor]| {
            let mut g = Graph::new();
            let ids = LstmParamIds::insert(&mut g, &p);
            let last = seq_lstm_forward(&mut g, &ids, xs).unwrap();
            let (_, probs) = classify(&mut g, last.h, &ids, 0).unwrap();
            probs
        };
        let a = run(&xs);
        let b = run(&rev);
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn mlp_gradients_match_central_differences() {
        let (e, h, l) = (4, 3, 3);
        let mut rng = rng_from_seed(97);
        let mut p = MlpParams::init(e, h, l, &mut rng);
        let x = uniform_tensor(e, 1, 1.0, &mut rng);

        let loss_of = |p: &MlpParams| -> Result<f64, NumericsError> {
            let mut g = Graph::new();
            let ids = MlpParamIds::insert(&mut g, p);
            let xi = g.leaf(x.clone());
            let (loss, _) = mlp_forward(&mut g, &ids, xi, 2)?;
            Ok(g.scalar_value(loss))
        };

        let mut g = Graph::new();
        let ids = MlpParamIds::insert(&mut g, &p);
        let xi = g.leaf(x.clone());
        let (loss, _) = mlp_forward(&mut g, &ids, xi, 2).unwrap();
        g.backward(loss).unwrap();
        let analytic = ids.grads(&g);

        let report = finite_diff_check(&mut p, &analytic, loss_of, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn seq_lstm_gradients_match_central_differences() {
        let (e, h, l) = (3, 2, 2);
        let mut rng = rng_from_seed(101);
        let mut p = LstmParams::init(e, h, l, &mut rng);
        let xs: Vec<Tensor> = (0..3).map(|_| uniform_tensor(e, 1, 1.0, &mut rng)).collect();

        let loss_of = |p: &LstmParams| -> Result<f64, NumericsError> {
            let mut g = Graph::new();
            let ids = LstmParamIds::insert(&mut g, p);
            let last = seq_lstm_forward(&mut g, &ids, &xs)?;
            let (loss, _) = classify(&mut g, last.h, &ids, 1)?;
            Ok(g.scalar_value(loss))
        };

        let mut g = Graph::new();
        let ids = LstmParamIds::insert(&mut g, &p);
        let last = seq_lstm_forward(&mut g, &ids, &xs).unwrap();
        let (loss, _) = classify(&mut g, last.h, &ids, 1).unwrap();
        g.backward(loss).unwrap();
        let analytic = ids.grads(&g);

        let report = finite_diff_check(&mut p, &analytic, loss_of, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn mlp_count_matches_allocation() {
        for (e, h, l) in [(300, 64, 4), (4, 3, 2), (16, 32, 4)] {
            let mut rng = rng_from_seed(1);
            let p = MlpParams::init(e, h, l, &mut rng);
            assert_eq!(p.param_count(), count_params(ModelKind::Mlp, e, h, l));
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut rng = rng_from_seed(3);
        let p = LstmParams::init(2, 2, 2, &mut rng);
        let mut g = Graph::new();
        let ids = LstmParamIds::insert(&mut g, &p);
        assert!(seq_lstm_forward(&mut g, &ids, &[]).is_err());
    }
}
