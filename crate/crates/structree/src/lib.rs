//! Tree-structured LSTMs over document hierarchy.
//!
//! A document is parsed into a tree (document / sections / paragraphs /
//! sentences / words), leaves get pretrained embeddings, and a child-sum
//! tree LSTM composes them bottom-up into a root state for classification.
//! Flat baselines (averaged MLP, sequential LSTM), training with Adam,
//! evaluation metrics, and attention reports live alongside.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod doctree;
pub mod embeddings;
pub mod metrics;
pub mod numerics;
pub mod training;
pub mod treelstm;

pub use attention::{attention_report, attention_weights, render_html, AttentionTree};
pub use baselines::{MlpParams, Pooling};
pub use checkpoint::{Checkpoint, Dims, ModelParams, ModelSpec};
pub use doctree::{DocNode, DocTree, LeafGranularity, NodeKind};
pub use embeddings::EmbeddingStore;
pub use metrics::MetricsReport;
pub use numerics::{Graph, NodeId, Tensor};
pub use training::{evaluate, train, Split, TrainConfig, TrainError, TrainOutcome};
pub use treelstm::{LstmParams, NodeTrace, Variant};
