//! Synthetic classification corpus with a planted, section-local signal.
//!
//! Every document is filler prose except one designated section whose
//! sentences mix in marker words for the document's class. The class is
//! therefore recoverable by a rule that only reads that section, while a
//! flat reader has to spot a handful of markers diluted across the whole
//! document.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{DocNode, DocTree, LeafGranularity, NodeKind, TreeError};
use crate::numerics::Rng;

/// Title of the section carrying the class signal.
pub const SIGNAL_TITLE: &str = "findings";

const FILLER_WORDS: usize = 200;
const MARKERS_PER_CLASS: usize = 4;
const MARKERS_PER_SENTENCE: usize = 2;

/// Inclusive size ranges for each level of a generated document.
#[derive(Clone, Copy, Debug)]
pub struct SynthShape {
    /// Sections per document, the signal section included.
    pub sections: (usize, usize),
    /// Paragraphs per section.
    pub paragraphs: (usize, usize),
    /// Sentences per paragraph.
    pub sentences: (usize, usize),
    /// Words per sentence.
    pub words: (usize, usize),
}

impl Default for SynthShape {
    fn default() -> Self {
        SynthShape { sections: (4, 6), paragraphs: (2, 3), sentences: (2, 4), words: (5, 9) }
    }
}

fn filler_word(i: usize) -> String {
    format!("filler{i:03}")
}

fn marker_word(class: usize, i: usize) -> String {
    format!("topic{class}w{i}")
}

/// If `token` is a marker word, which class it belongs to.
fn marker_class(token: &str, n_classes: usize) -> Option<usize> {
    let rest = token.strip_prefix("topic")?;
    let (class_str, idx_str) = rest.split_once('w')?;
    let class: usize = class_str.parse().ok()?;
    let idx: usize = idx_str.parse().ok()?;
    (class < n_classes && idx < MARKERS_PER_CLASS).then_some(class)
}

/// Every token the generator can emit, in a fixed order. Pairs with an
/// embedding table covering exactly this vocabulary.
pub fn synth_vocabulary(n_classes: usize) -> Vec<String> {
    let mut vocab: Vec<String> = (0..FILLER_WORDS).map(filler_word).collect();
    for c in 0..n_classes {
        for m in 0..MARKERS_PER_CLASS {
            vocab.push(marker_word(c, m));
        }
    }
    vocab
}

fn range(rng: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

fn filler_sentence(rng: &mut Rng, shape: &SynthShape) -> String {
    let n = range(rng, shape.words);
    let words: Vec<String> = (0..n).map(|_| filler_word(rng.gen_range(0..FILLER_WORDS))).collect();
    words.join(" ")
}

fn signal_sentence(rng: &mut Rng, shape: &SynthShape, class: usize) -> String {
    let n = range(rng, shape.words).max(MARKERS_PER_SENTENCE);
    let mut words: Vec<String> = (0..n).map(|_| filler_word(rng.gen_range(0..FILLER_WORDS))).collect();
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    for slot in slots.into_iter().take(MARKERS_PER_SENTENCE) {
        words[slot] = marker_word(class, rng.gen_range(0..MARKERS_PER_CLASS));
    }
    words.join(" ")
}

fn paragraphs(rng: &mut Rng, shape: &SynthShape, class: Option<usize>) -> Vec<DocNode> {
    (0..range(rng, shape.paragraphs))
        .map(|_| {
            let kids = (0..range(rng, shape.sentences))
                .map(|_| {
                    let text = match class {
                        Some(c) => signal_sentence(rng, shape, c),
                        None => filler_sentence(rng, shape),
                    };
                    DocNode::leaf(NodeKind::Sentence, text)
                })
                .collect();
            DocNode::internal(NodeKind::Paragraph, None, kids)
        })
        .collect()
}

/// Generate `n_docs` labeled documents with classes assigned round-robin, so
/// counts per class differ by at most one. Fully determined by `rng`.
pub fn synth_corpus(
    n_docs: usize,
    n_classes: usize,
    shape: &SynthShape,
    rng: &mut Rng,
) -> Result<Vec<DocTree>, TreeError> {
    if n_classes < 2 {
        return Err(TreeError::Invalid(format!("need at least 2 classes, got {n_classes}")));
    }
    if shape.sections.0 < 2 || shape.sections.0 > shape.sections.1 {
        return Err(TreeError::Invalid("section range must be ordered and start at 2 or more".to_string()));
    }
    let mut out = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let class = i % n_classes;
        let n_sections = range(rng, shape.sections);
        let signal_at = rng.gen_range(0..n_sections);
        let sections: Vec<DocNode> = (0..n_sections)
            .map(|s| {
                if s == signal_at {
                    DocNode::internal(
                        NodeKind::Section,
                        Some(SIGNAL_TITLE.to_string()),
                        paragraphs(rng, shape, Some(class)),
                    )
                } else {
                    DocNode::internal(
                        NodeKind::Section,
                        Some(format!("background-{s}")),
                        paragraphs(rng, shape, None),
                    )
                }
            })
            .collect();
        out.push(DocTree::new(
            class,
            LeafGranularity::Sentence,
            DocNode::internal(NodeKind::Document, None, sections),
        )?);
    }
    Ok(out)
}

/// Rule-based reader for the planted signal: find the designated section,
/// count marker words per class, take the majority. Returns None when the
/// section or markers are missing.
pub fn oracle_label(tree: &DocTree, n_classes: usize) -> Option<usize> {
    fn find_section<'a>(node: &'a DocNode) -> Option<&'a DocNode> {
        if node.kind == NodeKind::Section && node.title.as_deref() == Some(SIGNAL_TITLE) {
            return Some(node);
        }
        node.children.iter().find_map(find_section)
    }
    fn collect_text(node: &DocNode, out: &mut Vec<String>) {
        if let Some(t) = &node.text {
            out.push(t.clone());
        }
        for c in &node.children {
            collect_text(c, out);
        }
    }

    let section = find_section(&tree.root)?;
    let mut texts = Vec::new();
    collect_text(section, &mut texts);
    let mut counts = vec![0usize; n_classes];
    for text in &texts {
        for token in text.split_whitespace() {
            if let Some(c) = marker_class(token, n_classes) {
                counts[c] += 1;
            }
        }
    }
    let (best, best_count) = counts.iter().enumerate().max_by_key(|(_, c)| **c)?;
    (*best_count > 0).then_some(best)
}
