//! Pretrained embedding lookup in the word2vec text format: a `"<rows> <dim>"`
//! header line, then one `"<token> <v1> ... <vdim>"` row per token.
//!
//! Lookup is by exact token after trimming punctuation from the edges; no
//! case folding. Out-of-vocabulary handling is the caller-visible contract:
//! word leaves fall back to the zero vector, sentence leaves average the
//! in-vocabulary tokens only.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::doctree::{DocNode, DocTree, LeafGranularity};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("leaf {node_id}: injected vector has {got} entries, embeddings have {want}")]
    VectorDim { node_id: usize, got: usize, want: usize },
    #[error("leaf {node_id}: input width {got} differs from {want} elsewhere in the tree")]
    MixedWidths { node_id: usize, got: usize, want: usize },
}

fn format_err<T>(line: usize, msg: impl Into<String>) -> Result<T, EmbedError> {
    Err(EmbedError::Format { line, msg: msg.into() })
}

#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn empty(dim: usize) -> Self {
        EmbeddingStore { dim, vectors: BTreeMap::new() }
    }

    /// Seeded random store covering `vocab`, entries uniform in (-1, 1).
    /// Pairs with the synthetic corpus generator.
    pub fn random(vocab: &[String], dim: usize, rng: &mut Rng) -> Self {
        let mut vectors = BTreeMap::new();
        for token in vocab {
            let t = crate::numerics::uniform_tensor(dim, 1, 1.0, rng);
            vectors.insert(token.clone(), t.data().to_vec());
        }
        EmbeddingStore { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(|v| v.as_slice())
    }

    /// Parse the word2vec text format. Duplicate tokens keep the last row and
    /// log a warning; row-count or dimension mismatches are hard errors.
    pub fn load_word2vec_text<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return format_err(1, "empty file, expected `<rows> <dim>` header"),
        };
        let mut parts = header.split_whitespace();
        let (rows, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(r), Some(d), None) => {
                let rows: usize = r
                    .parse()
                    .map_err(|_| EmbedError::Format { line: 1, msg: format!("bad row count {r:?}") })?;
                let dim: usize = d
                    .parse()
                    .map_err(|_| EmbedError::Format { line: 1, msg: format!("bad dimension {d:?}") })?;
                (rows, dim)
            }
            _ => return format_err(1, format!("malformed header {header:?}")),
        };

        let mut store = EmbeddingStore::empty(dim);
        let mut seen = 0usize;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line has a first field");
            let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let values = match values {
                Ok(v) => v,
                Err(e) => return format_err(line_no, format!("bad float: {e}")),
            };
            if values.len() != dim {
                return format_err(
                    line_no,
                    format!("token {token:?} has {} values, header says {dim}", values.len()),
                );
            }
            if store.vectors.insert(token.to_string(), values).is_some() {
                log::warn!("embeddings line {line_no}: duplicate token {token:?}, keeping the last row");
            }
        }
        if seen != rows {
            return format_err(1, format!("header says {rows} rows, file has {seen}"));
        }
        Ok(store)
    }

    /// Write in the same format, tokens in sorted order.
    pub fn save_word2vec_text<W: Write>(&self, mut writer: W) -> Result<(), EmbedError> {
        writeln!(writer, "{} {}", self.vectors.len(), self.dim)?;
        for (token, values) in &self.vectors {
            write!(writer, "{token}")?;
            for v in values {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Embedding for one leaf. Word leaves look their token up directly
    /// (zero vector when out of vocabulary). Sentence leaves use an injected
    /// `vector` when present, otherwise the mean over in-vocabulary tokens
    /// (zero vector when every token misses).
    pub fn embed_leaf(
        &self,
        leaf: &DocNode,
        granularity: LeafGranularity,
    ) -> Result<Tensor, EmbedError> {
        if let Some(v) = &leaf.vector {
            if v.len() != self.dim {
                return Err(EmbedError::VectorDim { node_id: leaf.id, got: v.len(), want: self.dim });
            }
            return Ok(Tensor::vector(v.clone()));
        }
        let text = leaf.text.as_deref().unwrap_or("");
        match granularity {
            LeafGranularity::Word => {
                let token = trim_token(text);
                Ok(match self.lookup(token) {
                    Some(v) => Tensor::vector(v.to_vec()),
                    None => Tensor::zeros(self.dim, 1),
                })
            }
            LeafGranularity::Sentence => {
                let mut acc = Tensor::zeros(self.dim, 1);
                let mut hits = 0usize;
                for token in tokenize(text) {
                    if let Some(v) = self.lookup(token) {
                        for (a, b) in acc.data_mut().iter_mut().zip(v.iter()) {
                            *a += b;
                        }
                        hits += 1;
                    }
                }
                if hits > 0 {
                    let k = 1.0 / hits as f64;
                    for a in acc.data_mut().iter_mut() {
                        *a *= k;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Input vectors for every leaf, in depth-first order, keyed by node id.
    /// Leaves under a report node get that report's category appended, so all
    /// widths are checked for consistency before returning.
    pub fn leaf_vectors(&self, tree: &DocTree) -> Result<Vec<(usize, Tensor)>, EmbedError> {
        let mut out = Vec::new();
        self.walk_leaves(&tree.root, tree.leaf_granularity, None, &mut out)?;
        if let Some(want) = out.first().map(|(_, t)| t.rows()) {
            for (id, t) in &out {
                if t.rows() != want {
                    return Err(EmbedError::MixedWidths { node_id: *id, got: t.rows(), want });
                }
            }
        }
        Ok(out)
    }

    fn walk_leaves(
        &self,
        node: &DocNode,
        granularity: LeafGranularity,
        category: Option<u32>,
        out: &mut Vec<(usize, Tensor)>,
    ) -> Result<(), EmbedError> {
        let category = node.category_id.or(category);
        if node.is_leaf() {
            let mut v = self.embed_leaf(node, granularity)?;
            if let Some(c) = category {
                v = append_category(&v, c);
            }
            out.push((node.id, v));
            return Ok(());
        }
        for c in &node.children {
            self.walk_leaves(c, granularity, category, out)?;
        }
        Ok(())
    }
}

fn trim_token(raw: &str) -> &str {
    raw.trim_matches(|c: char| c.is_ascii_punctuation())
}

fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().map(trim_token).filter(|t| !t.is_empty())
}

/// Every distinct token across a corpus's leaves, sorted. Uses the same
/// tokenization as lookup, so a random store over this vocabulary covers
/// every leaf exactly.
pub fn corpus_vocabulary(corpus: &[DocTree]) -> Vec<String> {
    let mut vocab = std::collections::BTreeSet::new();
    for tree in corpus {
        for leaf in tree.leaves() {
            if let Some(text) = &leaf.text {
                for token in tokenize(text) {
                    vocab.insert(token.to_string());
                }
            }
        }
    }
    vocab.into_iter().collect()
}

/// Widen a vector by one entry holding the raw category id. Categories stay
/// unnormalized and are not one-hot encoded.
pub fn append_category(x: &Tensor, category_id: u32) -> Tensor {
    let mut data = x.data().to_vec();
    data.push(f64::from(category_id));
    Tensor::vector(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doctree::{build_patient_tree, parse_json_tree, NodeKind};
    use crate::numerics::rng_from_seed;

    fn tiny_store() -> EmbeddingStore {
        let text = "3 2\nalpha 1 2\nbeta 3 4\ngamma -1 0\n";
        EmbeddingStore::load_word2vec_text(text.as_bytes()).unwrap()
    }

    fn leaf(text: &str) -> DocNode {
        DocNode { id: 0, kind: NodeKind::Sentence, title: None, text: Some(text.to_string()), category_id: None, vector: None, children: Vec::new() }
    }

    #[test]
    fn loads_header_and_rows() {
        let s = tiny_store();
        assert_eq!((s.len(), s.dim()), (3, 2));
        assert_eq!(s.lookup("beta"), Some([3.0, 4.0].as_slice()));
        assert_eq!(s.lookup("missing"), None);
    }

    #[test]
    fn header_and_row_mismatches_carry_line_numbers() {
        let short = "3 2\nalpha 1 2\n";
        let err = EmbeddingStore::load_word2vec_text(short.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("3 rows"), "{err}");

        let bad_dim = "1 2\nalpha 1 2 3\n";
        let err = EmbeddingStore::load_word2vec_text(bad_dim.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");

        let bad_float = "1 2\nalpha 1 x\n";
        let err = EmbeddingStore::load_word2vec_text(bad_float.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn duplicate_token_keeps_last_row() {
        let text = "2 1\ntok 1\ntok 5\n";
        let s = EmbeddingStore::load_word2vec_text(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.lookup("tok"), Some([5.0].as_slice()));
    }

    #[test]
    fn save_load_round_trip() {
        let s = tiny_store();
        let mut buf = Vec::new();
        s.save_word2vec_text(&mut buf).unwrap();
        let back = EmbeddingStore::load_word2vec_text(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.lookup("gamma"), s.lookup("gamma"));
    }

    #[test]
    fn sentence_mean_skips_out_of_vocab() {
        let s = tiny_store();
        let full = s.embed_leaf(&leaf("alpha beta"), LeafGranularity::Sentence).unwrap();
        assert_eq!(full.data(), &[2.0, 3.0]);
        let partial = s.embed_leaf(&leaf("alpha unknown"), LeafGranularity::Sentence).unwrap();
        assert_eq!(partial.data(), &[1.0, 2.0]);
        let none = s.embed_leaf(&leaf("nope nada"), LeafGranularity::Sentence).unwrap();
        assert_eq!(none.data(), &[0.0, 0.0]);
    }

    #[test]
    fn punctuation_is_trimmed_before_lookup() {
        let s = tiny_store();
        let v = s.embed_leaf(&leaf("alpha."), LeafGranularity::Sentence).unwrap();
        assert_eq!(v.data(), &[1.0, 2.0]);

        let word = DocNode { kind: NodeKind::Word, ..leaf("beta,") };
        let v = s.embed_leaf(&word, LeafGranularity::Word).unwrap();
        assert_eq!(v.data(), &[3.0, 4.0]);
    }

    #[test]
    fn word_out_of_vocab_is_zero() {
        let s = tiny_store();
        let word = DocNode { kind: NodeKind::Word, ..leaf("ghost") };
        let v = s.embed_leaf(&word, LeafGranularity::Word).unwrap();
        assert_eq!(v.data(), &[0.0, 0.0]);
    }

    #[test]
    fn injected_vector_wins_and_is_dimension_checked() {
        let s = tiny_store();
        let mut l = leaf("alpha beta");
        l.vector = Some(vec![9.0, -9.0]);
        let v = s.embed_leaf(&l, LeafGranularity::Sentence).unwrap();
        assert_eq!(v.data(), &[9.0, -9.0]);

        l.vector = Some(vec![9.0]);
        assert!(matches!(
            s.embed_leaf(&l, LeafGranularity::Sentence),
            Err(EmbedError::VectorDim { got: 1, want: 2, .. })
        ));
    }

    #[test]
    fn append_category_adds_one_raw_component() {
        let x = Tensor::vector(vec![0.5, -1.0]);
        let y = append_category(&x, 7);
        assert_eq!(y.data(), &[0.5, -1.0, 7.0]);
        assert_eq!(y.rows(), x.rows() + 1);
    }

    #[test]
    fn patient_leaves_get_their_report_category() {
        let report = |text: &str| {
            parse_json_tree(&format!(
                r#"{{"label":0,"leaf_granularity":"sentence","root":{{"kind":"document","children":[{{"kind":"paragraph","children":[{{"kind":"sentence","text":"{text}"}}]}}]}}}}"#
            ))
            .unwrap()
        };
        let patient = build_patient_tree(1, vec![(3, report("alpha")), (7, report("beta"))]).unwrap();
        let s = tiny_store();
        let vecs = s.leaf_vectors(&patient).unwrap();
        assert_eq!(vecs.len(), 2);
        assert_eq!(vecs[0].1.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(vecs[1].1.data(), &[3.0, 4.0, 7.0]);
    }

    #[test]
    fn random_store_is_seeded() {
        let vocab: Vec<String> = vec!["a".into(), "b".into()];
        let s1 = EmbeddingStore::random(&vocab, 4, &mut rng_from_seed(3));
        let s2 = EmbeddingStore::random(&vocab, 4, &mut rng_from_seed(3));
        assert_eq!(s1.lookup("a"), s2.lookup("a"));
        assert_eq!(s1.lookup("b"), s2.lookup("b"));
        assert_ne!(s1.lookup("a"), s1.lookup("b"));
    }
}
