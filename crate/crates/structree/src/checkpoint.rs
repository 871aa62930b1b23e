//! Saved models. A checkpoint is one JSON document holding the model recipe
//! (kind, variant or pooling, granularity, dimensions, seed) and every
//! parameter tensor. Serialization order is the struct order below, and f64
//! round-trips exactly through JSON, so identical models save to identical
//! bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{doc_vector, leaf_sequence, mlp_forward, seq_lstm_forward, MlpParamIds, MlpParams, Pooling};
use crate::doctree::{DocTree, LeafGranularity};
use crate::embeddings::{EmbedError, EmbeddingStore};
use crate::numerics::{Graph, NumericsError};
use crate::treelstm::{
    classify, encode_tree, node_inputs, LstmParamIds, LstmParams, ModelKind, NodeTrace, Variant,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint dims {stated} disagree with stored tensors {actual}")]
    DimsMismatch { stated: String, actual: String },
    #[error("model is {model} but parameters are {params}")]
    FamilyMismatch { model: &'static str, params: &'static str },
    #[error("tree granularity {tree} does not match model granularity {model}")]
    Granularity { tree: &'static str, model: &'static str },
    #[error("leaf vectors are {got}-dimensional, model expects {want}")]
    EmbeddingWidth { got: usize, want: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which model a checkpoint holds, with its structural knobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Tree { variant: Variant },
    SeqLstm,
    Mlp { pooling: Pooling },
}

impl ModelSpec {
    pub fn model_kind(self) -> ModelKind {
        match self {
            ModelSpec::Tree { .. } => ModelKind::TreeLstm,
            ModelSpec::SeqLstm => ModelKind::SeqLstm,
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn describe(self) -> String {
        match self {
            ModelSpec::Tree { variant: Variant::ZeroVectors } => "tree-lstm (zero vectors)".into(),
            ModelSpec::Tree { variant: Variant::HierarchicalAverage } => {
                "tree-lstm (hierarchical average)".into()
            }
            ModelSpec::SeqLstm => "sequential lstm".into(),
            ModelSpec::Mlp { pooling: Pooling::Unweighted } => "mlp (unweighted mean)".into(),
            ModelSpec::Mlp { pooling: Pooling::Hierarchical } => "mlp (hierarchical mean)".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub e: usize,
    pub h: usize,
    pub l: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "tensors", rename_all = "snake_case")]
pub enum ModelParams {
    Lstm(LstmParams),
    Mlp(MlpParams),
}

impl ModelParams {
    fn family(&self) -> &'static str {
        match self {
            ModelParams::Lstm(_) => "lstm",
            ModelParams::Mlp(_) => "mlp",
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        match self {
            ModelParams::Lstm(p) => p.dims(),
            ModelParams::Mlp(p) => p.dims(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelSpec,
    pub granularity: LeafGranularity,
    pub dims: Dims,
    pub seed: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Build with consistency checks between the declared model and the tensors.
    pub fn new(
        model: ModelSpec,
        granularity: LeafGranularity,
        seed: u64,
        params: ModelParams,
    ) -> Result<Self, ModelError> {
        let (e, h, l) = params.dims();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            granularity,
            dims: Dims { e, h, l },
            seed,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(self.version));
        }
        let (e, h, l) = self.params.dims();
        if (self.dims.e, self.dims.h, self.dims.l) != (e, h, l) {
            return Err(ModelError::DimsMismatch {
                stated: format!("{}x{}x{}", self.dims.e, self.dims.h, self.dims.l),
                actual: format!("{e}x{h}x{l}"),
            });
        }
        let expect_lstm = !matches!(self.model, ModelSpec::Mlp { .. });
        let is_lstm = matches!(self.params, ModelParams::Lstm(_));
        if expect_lstm != is_lstm {
            return Err(ModelError::FamilyMismatch {
                model: if expect_lstm { "an lstm" } else { "an mlp" },
                params: self.params.family(),
            });
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save_path<P: AsRef<Path>>(&self, path: P) -> Result<(), ModelError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load_path<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        Checkpoint::load(BufReader::new(File::open(path)?))
    }

    fn check_tree(&self, tree: &DocTree) -> Result<(), ModelError> {
        if tree.leaf_granularity != self.granularity {
            return Err(ModelError::Granularity {
                tree: tree.leaf_granularity.as_str(),
                model: self.granularity.as_str(),
            });
        }
        Ok(())
    }

    fn check_width(&self, leaf_vecs: &[(usize, crate::numerics::Tensor)]) -> Result<(), ModelError> {
        if let Some((_, v)) = leaf_vecs.first() {
            if v.rows() != self.dims.e {
                return Err(ModelError::EmbeddingWidth { got: v.rows(), want: self.dims.e });
            }
        }
        Ok(())
    }

    /// Class probabilities for one document.
    pub fn predict_probs(
        &self,
        tree: &DocTree,
        store: &EmbeddingStore,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_tree(tree)?;
        let leaf_vecs = store.leaf_vectors(tree)?;
        self.check_width(&leaf_vecs)?;
        // The label only picks which loss to report; probabilities ignore it.
        match (&self.model, &self.params) {
            (ModelSpec::Tree { variant }, ModelParams::Lstm(p)) => {
                let inputs = node_inputs(tree, *variant, &leaf_vecs)?;
                let mut g = Graph::new();
                let ids = LstmParamIds::insert(&mut g, p);
                let traces = encode_tree(&mut g, tree, &inputs, &ids)?;
                let (_, probs) = classify(&mut g, traces[0].h, &ids, 0)?;
                Ok(probs)
            }
            (ModelSpec::SeqLstm, ModelParams::Lstm(p)) => {
                let xs = leaf_sequence(tree, &leaf_vecs)?;
                let mut g = Graph::new();
                let ids = LstmParamIds::insert(&mut g, p);
                let last = seq_lstm_forward(&mut g, &ids, &xs)?;
                let (_, probs) = classify(&mut g, last.h, &ids, 0)?;
                Ok(probs)
            }
            (ModelSpec::Mlp { pooling }, ModelParams::Mlp(p)) => {
                let v = doc_vector(tree, &leaf_vecs, *pooling)?;
                let mut g = Graph::new();
                let ids = MlpParamIds::insert(&mut g, p);
                let xi = g.leaf(v);
                let (_, probs) = mlp_forward(&mut g, &ids, xi, 0)?;
                Ok(probs)
            }
            _ => Err(ModelError::FamilyMismatch {
                model: "inconsistent",
                params: self.params.family(),
            }),
        }
    }

    /// Full tree forward pass, keeping the graph and per-node traces around
    /// for attention extraction. Tree models only.
    pub fn tree_trace(
        &self,
        tree: &DocTree,
        store: &EmbeddingStore,
    ) -> Result<(Graph, Vec<NodeTrace>, Vec<f64>), ModelError> {
        self.check_tree(tree)?;
        let (variant, p) = match (&self.model, &self.params) {
            (ModelSpec::Tree { variant }, ModelParams::Lstm(p)) => (*variant, p),
            _ => {
                return Err(ModelError::Invalid(format!(
                    "attention requires a tree-lstm checkpoint, this one is {}",
                    self.model.describe()
                )))
            }
        };
        let leaf_vecs = store.leaf_vectors(tree)?;
        self.check_width(&leaf_vecs)?;
        let inputs = node_inputs(tree, variant, &leaf_vecs)?;
        let mut g = Graph::new();
        let ids = LstmParamIds::insert(&mut g, p);
        let traces = encode_tree(&mut g, tree, &inputs, &ids)?;
        let (_, probs) = classify(&mut g, traces[0].h, &ids, 0)?;
        Ok((g, traces, probs))
    }
}
