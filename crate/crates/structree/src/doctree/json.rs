//! JSON form of a document tree, one object per document:
//!
//! ```json
//! {"label": 2, "leaf_granularity": "sentence",
//!  "root": {"kind": "document", "children": [
//!     {"kind": "section", "title": "Intro", "children": [
//!        {"kind": "paragraph", "children": [
//!           {"kind": "sentence", "text": "..."}]}]}]}}
//! ```
//!
//! Leaves may carry a precomputed `"vector"`; report nodes carry
//! `"category_id"`. Node ids are not serialized, they are re-derived from
//! document order. A corpus is one such object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{structure_err, DocNode, DocTree, LeafGranularity, NodeKind, TreeError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTree {
    label: usize,
    leaf_granularity: LeafGranularity,
    root: RawNode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<RawNode>,
}

fn lower_node(raw: RawNode, path: &str) -> Result<DocNode, TreeError> {
    let kind: NodeKind = match raw.kind.parse() {
        Ok(k) => k,
        Err(msg) => return structure_err(path, msg),
    };
    let mut children = Vec::with_capacity(raw.children.len());
    for (i, c) in raw.children.into_iter().enumerate() {
        children.push(lower_node(c, &format!("{path}.children[{i}]"))?);
    }
    Ok(DocNode {
        id: 0,
        kind,
        title: raw.title,
        text: raw.text,
        category_id: raw.category_id,
        vector: raw.vector,
        children,
    })
}

fn raise_node(node: &DocNode) -> RawNode {
    RawNode {
        kind: node.kind.as_str().to_string(),
        title: node.title.clone(),
        text: node.text.clone(),
        category_id: node.category_id,
        vector: node.vector.clone(),
        children: node.children.iter().map(raise_node).collect(),
    }
}

/// Parse and validate one JSON document.
pub fn parse_json_tree(json: &str) -> Result<DocTree, TreeError> {
    let raw: RawTree = serde_json::from_str(json)?;
    let root = lower_node(raw.root, "root")?;
    DocTree::new(raw.label, raw.leaf_granularity, root)
}

/// Serialize one document to a single JSON line.
pub fn tree_to_json(tree: &DocTree) -> String {
    let raw = RawTree {
        label: tree.label,
        leaf_granularity: tree.leaf_granularity,
        root: raise_node(&tree.root),
    };
    serde_json::to_string(&raw).expect("document trees always serialize")
}

/// Read a JSON-lines corpus; blank lines are skipped, any bad line is an
/// error naming its line number.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<DocTree>, TreeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_json_tree(&line) {
            Ok(tree) => out.push(tree),
            Err(e) => {
                return Err(TreeError::Invalid(format!("line {}: {e}", i + 1)));
            }
        }
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &[DocTree]) -> Result<(), TreeError> {
    for tree in corpus {
        writeln!(writer, "{}", tree_to_json(tree))?;
    }
    Ok(())
}
