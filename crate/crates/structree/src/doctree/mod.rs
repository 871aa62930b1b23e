//! Document trees: words/sentences nested under paragraphs, sections, and
//! roots (document, or patient-of-reports). Node ids are assigned in
//! depth-first preorder and are contiguous from zero, so a tree's nodes can
//! be indexed by a flat `Vec`.

mod json;
mod sectioned;
mod synth;

pub use json::{parse_json_tree, read_corpus, tree_to_json, write_corpus};
pub use sectioned::parse_sectioned_text;
pub use synth::{oracle_label, synth_corpus, synth_vocabulary, SynthShape, SIGNAL_TITLE};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Word,
    Sentence,
    Paragraph,
    Section,
    Report,
    Document,
    Patient,
}

impl NodeKind {
    /// Position in the hierarchy; kinds never increase along a root-to-leaf
    /// path (equal is allowed, e.g. subsections inside sections).
    pub fn level(self) -> u8 {
        match self {
            NodeKind::Word => 0,
            NodeKind::Sentence => 1,
            NodeKind::Paragraph => 2,
            NodeKind::Section => 3,
            NodeKind::Report => 4,
            NodeKind::Document => 5,
            NodeKind::Patient => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Word => "word",
            NodeKind::Sentence => "sentence",
            NodeKind::Paragraph => "paragraph",
            NodeKind::Section => "section",
            NodeKind::Report => "report",
            NodeKind::Document => "document",
            NodeKind::Patient => "patient",
        }
    }
}

impl std::str::FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(NodeKind::Word),
            "sentence" => Ok(NodeKind::Sentence),
            "paragraph" => Ok(NodeKind::Paragraph),
            "section" => Ok(NodeKind::Section),
            "report" => Ok(NodeKind::Report),
            "document" => Ok(NodeKind::Document),
            "patient" => Ok(NodeKind::Patient),
            other => Err(format!("unknown node kind {other:?}")),
        }
    }
}

/// Which kind the leaves of a tree carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafGranularity {
    Word,
    Sentence,
}

impl LeafGranularity {
    pub fn kind(self) -> NodeKind {
        match self {
            LeafGranularity::Word => NodeKind::Word,
            LeafGranularity::Sentence => NodeKind::Sentence,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LeafGranularity::Word => "word",
            LeafGranularity::Sentence => "sentence",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocNode {
    /// Depth-first preorder index within the tree.
    pub id: usize,
    pub kind: NodeKind,
    pub title: Option<String>,
    /// Present exactly on leaves.
    pub text: Option<String>,
    /// Report category; only report nodes carry one.
    pub category_id: Option<u32>,
    /// Optional precomputed leaf embedding.
    pub vector: Option<Vec<f64>>,
    pub children: Vec<DocNode>,
}

impl DocNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn blank(kind: NodeKind) -> DocNode {
        DocNode { id: 0, kind, title: None, text: None, category_id: None, vector: None, children: Vec::new() }
    }

    pub(crate) fn internal(kind: NodeKind, title: Option<String>, children: Vec<DocNode>) -> DocNode {
        DocNode { title, children, ..DocNode::blank(kind) }
    }

    pub(crate) fn leaf(kind: NodeKind, text: String) -> DocNode {
        DocNode { text: Some(text), ..DocNode::blank(kind) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocTree {
    pub label: usize,
    pub leaf_granularity: LeafGranularity,
    pub root: DocNode,
}

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("{path}: {msg}")]
    Structure { path: String, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn structure_err<T>(path: &str, msg: impl Into<String>) -> Result<T, TreeError> {
    Err(TreeError::Structure { path: path.to_string(), msg: msg.into() })
}

impl DocTree {
    /// Build from a root node: assigns preorder ids, then validates.
    pub fn new(
        label: usize,
        leaf_granularity: LeafGranularity,
        mut root: DocNode,
    ) -> Result<DocTree, TreeError> {
        assign_ids(&mut root, &mut 0);
        let tree = DocTree { label, leaf_granularity, root };
        tree.validate()?;
        Ok(tree)
    }

    /// All nodes in preorder; the index of each node equals its id.
    pub fn nodes(&self) -> Vec<&DocNode> {
        let mut out = Vec::new();
        collect_preorder(&self.root, &mut out);
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&DocNode> {
        self.nodes().into_iter().filter(|n| n.is_leaf()).collect()
    }

    /// Nodes exactly `depth` edges below the root.
    pub fn nodes_at_depth(&self, depth: usize) -> Vec<&DocNode> {
        let mut out = Vec::new();
        let mut frontier = vec![&self.root];
        for _ in 0..depth {
            let mut next = Vec::new();
            for n in frontier {
                next.extend(n.children.iter());
            }
            frontier = next;
        }
        out.extend(frontier);
        out
    }

    pub fn max_depth(&self) -> usize {
        fn depth(n: &DocNode) -> usize {
            n.children.iter().map(|c| 1 + depth(c)).max().unwrap_or(0)
        }
        depth(&self.root)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let mut next_id = 0;
        validate_node(&self.root, None, self.leaf_granularity, "root", &mut next_id)
    }
}

fn assign_ids(node: &mut DocNode, next: &mut usize) {
    node.id = *next;
    *next += 1;
    for c in node.children.iter_mut() {
        assign_ids(c, next);
    }
}

fn collect_preorder<'a>(node: &'a DocNode, out: &mut Vec<&'a DocNode>) {
    out.push(node);
    for c in &node.children {
        collect_preorder(c, out);
    }
}

fn validate_node(
    node: &DocNode,
    parent_kind: Option<NodeKind>,
    granularity: LeafGranularity,
    path: &str,
    next_id: &mut usize,
) -> Result<(), TreeError> {
    if node.id != *next_id {
        return structure_err(path, format!("id {} breaks depth-first numbering (expected {})", node.id, next_id));
    }
    *next_id += 1;

    if let Some(pk) = parent_kind {
        if node.kind.level() > pk.level() {
            return structure_err(
                path,
                format!("{} node under {} parent breaks the hierarchy order", node.kind.as_str(), pk.as_str()),
            );
        }
    }
    if node.category_id.is_some() && node.kind != NodeKind::Report {
        return structure_err(path, "category_id is only valid on report nodes");
    }

    if node.is_leaf() {
        if node.text.is_none() {
            return structure_err(path, "leaf without text");
        }
        if node.kind != granularity.kind() {
            return structure_err(
                path,
                format!("leaf kind {} does not match declared granularity {}", node.kind.as_str(), granularity.as_str()),
            );
        }
    } else {
        if node.text.is_some() {
            return structure_err(path, "node with children must not carry text");
        }
        if node.vector.is_some() {
            return structure_err(path, "vector is only valid on leaves");
        }
        for (i, c) in node.children.iter().enumerate() {
            let child_path = format!("{path}.children[{i}]");
            validate_node(c, Some(node.kind), granularity, &child_path, next_id)?;
        }
    }
    Ok(())
}

/// Per-document structure counts used by the length filter and corpus stats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DocStats {
    pub sections: usize,
    pub paragraphs: usize,
    pub sentences: usize,
}

pub fn doc_stats(tree: &DocTree) -> DocStats {
    let mut s = DocStats::default();
    for n in tree.nodes() {
        match n.kind {
            NodeKind::Section => s.sections += 1,
            NodeKind::Paragraph => s.paragraphs += 1,
            NodeKind::Sentence => s.sentences += 1,
            _ => {}
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthThresholds {
    pub min_sections: usize,
    pub min_paragraphs: usize,
    pub min_sentences: usize,
}

impl Default for LengthThresholds {
    fn default() -> Self {
        LengthThresholds { min_sections: 2, min_paragraphs: 3, min_sentences: 5 }
    }
}

/// Keep a document iff it meets every minimum (inclusive).
pub fn passes_length_filter(tree: &DocTree, th: &LengthThresholds) -> bool {
    let s = doc_stats(tree);
    s.sections >= th.min_sections && s.paragraphs >= th.min_paragraphs && s.sentences >= th.min_sentences
}

/// Combine per-report trees into one patient tree. Each report root keeps its
/// children and title but becomes a report node carrying its category id.
pub fn build_patient_tree(
    label: usize,
    reports: Vec<(u32, DocTree)>,
) -> Result<DocTree, TreeError> {
    if reports.is_empty() {
        return Err(TreeError::Invalid("patient tree needs at least one report".to_string()));
    }
    let granularity = reports[0].1.leaf_granularity;
    let mut children = Vec::with_capacity(reports.len());
    for (category, tree) in reports {
        if tree.leaf_granularity != granularity {
            return Err(TreeError::Invalid("reports mix leaf granularities".to_string()));
        }
        let DocNode { title, children: body, .. } = tree.root;
        children.push(DocNode {
            category_id: Some(category),
            ..DocNode::internal(NodeKind::Report, title, body)
        });
    }
    DocTree::new(label, granularity, DocNode::internal(NodeKind::Patient, None, children))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(text: &str) -> DocNode {
        DocNode::leaf(NodeKind::Sentence, text.to_string())
    }

    fn paragraph(sentences: &[&str]) -> DocNode {
        DocNode::internal(NodeKind::Paragraph, None, sentences.iter().map(|s| sentence(s)).collect())
    }

    fn small_doc() -> DocTree {
        let intro = DocNode::internal(
            NodeKind::Section,
            Some("Intro".to_string()),
            vec![paragraph(&["First.", "Second."])],
        );
        let body = DocNode::internal(
            NodeKind::Section,
            Some("Body".to_string()),
            vec![paragraph(&["Third."]), paragraph(&["Fourth.", "Fifth."])],
        );
        DocTree::new(1, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, vec![intro, body]))
            .unwrap()
    }

    #[test]
    fn ids_are_contiguous_preorder() {
        let doc = small_doc();
        let ids: Vec<usize> = doc.nodes().iter().map(|n| n.id).collect();
        assert_eq!(ids, (0..doc.node_count()).collect::<Vec<_>>());
        assert_eq!(doc.root.id, 0);
    }

    #[test]
    fn stats_count_by_kind() {
        let s = doc_stats(&small_doc());
        assert_eq!(s, DocStats { sections: 2, paragraphs: 3, sentences: 5 });
    }

    #[test]
    fn length_filter_bounds_are_inclusive() {
        let th = LengthThresholds::default();
        assert!(passes_length_filter(&small_doc(), &th));

        // One section short, everything else oversized.
        let fat_section = DocNode::internal(
            NodeKind::Section,
            Some("Only".to_string()),
            (0..9).map(|_| paragraph(&["A.", "B.", "C.", "D.", "E."])).collect(),
        );
        let one_section =
            DocTree::new(0, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, vec![fat_section]))
                .unwrap();
        let s = doc_stats(&one_section);
        assert!(s.paragraphs >= 9 && s.sentences >= 40);
        assert!(!passes_length_filter(&one_section, &th));
    }

    #[test]
    fn hierarchy_violations_are_rejected() {
        // A section nested under a paragraph increases the level going down.
        let bad = DocNode::internal(
            NodeKind::Paragraph,
            None,
            vec![DocNode::internal(NodeKind::Section, None, vec![sentence("X.")])],
        );
        let err =
            DocTree::new(0, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, vec![bad]))
                .unwrap_err();
        assert!(err.to_string().contains("root.children[0].children[0]"), "{err}");
    }

    #[test]
    fn leaf_without_text_is_rejected() {
        let bad = DocNode::internal(NodeKind::Paragraph, None, vec![DocNode::blank(NodeKind::Sentence)]);
        let err =
            DocTree::new(0, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, vec![bad]))
                .unwrap_err();
        assert!(err.to_string().contains("leaf without text"), "{err}");
    }

    #[test]
    fn subsections_are_allowed() {
        let sub = DocNode::internal(NodeKind::Section, Some("Sub".to_string()), vec![paragraph(&["Deep."])]);
        let top = DocNode::internal(NodeKind::Section, Some("Top".to_string()), vec![sub]);
        assert!(DocTree::new(0, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, vec![top]))
            .is_ok());
    }

    #[test]
    fn patient_tree_keeps_categories_and_renumbers() {
        let report = |texts: &[&str]| {
            DocTree::new(
                0,
                LeafGranularity::Sentence,
                DocNode::internal(NodeKind::Document, None, vec![paragraph(texts)]),
            )
            .unwrap()
        };
        let patient = build_patient_tree(1, vec![(3, report(&["A.", "B."])), (7, report(&["C."]))]).unwrap();
        assert_eq!(patient.root.kind, NodeKind::Patient);
        let kinds: Vec<NodeKind> = patient.root.children.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![NodeKind::Report, NodeKind::Report]);
        let cats: Vec<Option<u32>> = patient.root.children.iter().map(|c| c.category_id).collect();
        assert_eq!(cats, vec![Some(3), Some(7)]);
        let ids: Vec<usize> = patient.nodes().iter().map(|n| n.id).collect();
        assert_eq!(ids, (0..patient.node_count()).collect::<Vec<_>>());
        patient.validate().unwrap();
    }

    #[test]
    fn nodes_at_depth_walks_levels() {
        let doc = small_doc();
        assert_eq!(doc.nodes_at_depth(0).len(), 1);
        assert_eq!(doc.nodes_at_depth(1).len(), 2);
        assert_eq!(doc.nodes_at_depth(2).len(), 3);
        assert_eq!(doc.nodes_at_depth(3).len(), 5);
        assert_eq!(doc.nodes_at_depth(9).len(), 0);
        assert_eq!(doc.max_depth(), 3);
    }
}
