//! Post-hoc attention: how much of a parent's memory came through each
//! child's forget gate. For child k of node j, the raw share in dimension d
//! is f_jk[d] c_k[d] over the sum across siblings; the child's weight is the
//! mean share over usable dimensions. Shares are signed, so a weight can
//! leave [0, 1]; the JSON keeps raw values and only the HTML clips.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelError};
use crate::doctree::{DocTree, NodeKind};
use crate::embeddings::EmbeddingStore;
use crate::metrics::argmax;
use crate::numerics::Graph;
use crate::treelstm::NodeTrace;

/// A dimension whose sibling contributions sum below this is skipped.
pub const ATTENTION_DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildWeight {
    pub id: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionNode {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    pub children: Vec<ChildWeight>,
    /// True when every dimension was degenerate and the weights fell back to
    /// uniform.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTree {
    pub prediction: usize,
    pub label: usize,
    pub nodes: Vec<AttentionNode>,
}

impl AttentionTree {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("attention tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Extract attention weights from an encoded tree. `traces` is indexed by
/// node id, as returned by the encoder.
pub fn attention_weights(
    g: &Graph,
    tree: &DocTree,
    traces: &[NodeTrace],
    prediction: usize,
) -> AttentionTree {
    let mut nodes = Vec::with_capacity(tree.node_count());
    for node in tree.nodes() {
        let mut out = AttentionNode {
            id: node.id,
            kind: node.kind,
            title: node.title.clone(),
            text: node.text.clone(),
            children: Vec::with_capacity(node.children.len()),
            degenerate: false,
        };
        if !node.children.is_empty() {
            let trace = &traces[node.id];
            let gated: Vec<Vec<f64>> = node
                .children
                .iter()
                .zip(&trace.forget)
                .map(|(child, f)| {
                    let f = g.value(*f).data();
                    let c = g.value(traces[child.id].c).data();
                    f.iter().zip(c).map(|(a, b)| a * b).collect()
                })
                .collect();
            let dims = gated[0].len();
            let mut contrib = vec![0.0; gated.len()];
            let mut used = 0usize;
            for d in 0..dims {
                let denom: f64 = gated.iter().map(|row| row[d]).sum();
                if denom.abs() < ATTENTION_DENOM_FLOOR {
                    continue;
                }
                for (k, row) in gated.iter().enumerate() {
                    contrib[k] += row[d] / denom;
                }
                used += 1;
            }
            let weights: Vec<f64> = if used == 0 {
                out.degenerate = true;
                vec![1.0 / gated.len() as f64; gated.len()]
            } else {
                contrib.iter().map(|c| c / used as f64).collect()
            };
            for (child, w) in node.children.iter().zip(weights) {
                out.children.push(ChildWeight { id: child.id, weight: w });
            }
        }
        nodes.push(out);
    }
    AttentionTree { prediction, label: tree.label, nodes }
}

/// Encode one document with a tree checkpoint and read its attention off.
pub fn attention_report(
    ckpt: &Checkpoint,
    tree: &DocTree,
    store: &EmbeddingStore,
) -> Result<AttentionTree, ModelError> {
    let (g, traces, probs) = ckpt.tree_trace(tree, store)?;
    Ok(attention_weights(&g, tree, &traces, argmax(&probs)))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

fn kind_label(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Word => "word",
        NodeKind::Sentence => "sentence",
        NodeKind::Paragraph => "paragraph",
        NodeKind::Section => "section",
        NodeKind::Report => "report",
        NodeKind::Document => "document",
        NodeKind::Patient => "patient",
    }
}

/// Self-contained HTML: the tree nested as divs, each child shaded by its
/// clipped weight (raw weights stay in the JSON export). Output is built in
/// document order with fixed number formatting, so equal inputs give equal
/// bytes.
pub fn render_html(atree: &AttentionTree) -> String {
    let mut by_id: Vec<&AttentionNode> = Vec::with_capacity(atree.nodes.len());
    for node in &atree.nodes {
        by_id.push(node);
    }

    fn emit(out: &mut String, nodes: &[&AttentionNode], id: usize, weight: Option<f64>, depth: usize) {
        let node = nodes[id];
        let indent = "  ".repeat(depth + 1);
        let style = match weight {
            // Clip to [0, 1]; the shade is proportional to the clipped weight.
            Some(w) => {
                let alpha = 0.8 * w.clamp(0.0, 1.0);
                format!(" style=\"background: rgba(185, 28, 28, {alpha:.4})\"")
            }
            None => String::new(),
        };
        let title = match weight {
            Some(w) => format!(" title=\"weight {w:.6}\""),
            None => String::new(),
        };
        out.push_str(&format!("{indent}<div class=\"node\"{style}{title}>\n"));
        let mut head = format!("<span class=\"kind\">{}</span>", kind_label(node.kind));
        if let Some(t) = &node.title {
            head.push_str(&format!(" <span class=\"title\">{}</span>", escape(t)));
        }
        if let Some(w) = weight {
            head.push_str(&format!(" <span class=\"weight\">{w:.3}</span>"));
        }
        if node.degenerate {
            head.push_str(" <span class=\"degenerate\">uniform fallback</span>");
        }
        out.push_str(&format!("{indent}  <p class=\"head\">{head}</p>\n"));
        if let Some(text) = &node.text {
            out.push_str(&format!("{indent}  <p class=\"text\">{}</p>\n", escape(text)));
        }
        for cw in &node.children {
            emit(out, nodes, cw.id, Some(cw.weight), depth + 1);
        }
        out.push_str(&format!("{indent}</div>\n"));
    }

    let mut body = String::new();
    if !by_id.is_empty() {
        emit(&mut body, &by_id, 0, None, 0);
    }

    format!(
        "<!DOCTYPE html>\n<!-- attention report, template v1 -->\n<html lang=\"en\">\n<head>\n\
         <meta charset=\"utf-8\">\n<title>attention: predicted {pred}, true {label}</title>\n\
         <style>\n\
         body {{ font-family: sans-serif; margin: 2rem; color: #1a1a1a; }}\n\
         .node {{ margin: 0.3rem 0 0.3rem 1.2rem; padding: 0.3rem 0.6rem; border-left: 2px solid #c8c8c8; }}\n\
         .head {{ margin: 0; }}\n\
         .kind {{ font-size: 0.8rem; text-transform: uppercase; color: #666; }}\n\
         .title {{ font-weight: bold; }}\n\
         .weight {{ font-size: 0.8rem; color: #444; }}\n\
         .degenerate {{ font-size: 0.8rem; color: #b45309; }}\n\
         .text {{ margin: 0.2rem 0 0 0; }}\n\
         </style>\n</head>\n<body>\n\
         <h1>predicted class {pred}, true class {label}</h1>\n\
         {body}</body>\n</html>\n",
        pred = atree.prediction,
        label = atree.label,
        body = body,
    )
}
