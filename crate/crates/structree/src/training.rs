//! Training: Adam over mean batch gradients, a seeded 80/10/10 split, and
//! best-validation-score checkpointing.
//!
//! Determinism contract: everything random flows from one seed (split first,
//! then parameter init, then the per-epoch shuffles, all on one stream).
//! Batches fan out across threads but results are merged in document order,
//! so thread count never changes a single bit of the outcome.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{doc_vector, leaf_sequence, mlp_forward, seq_lstm_forward, MlpParamIds, MlpParams};
use crate::checkpoint::{Checkpoint, ModelError, ModelParams, ModelSpec};
use crate::doctree::{DocTree, LeafGranularity};
use crate::embeddings::{EmbedError, EmbeddingStore};
use crate::metrics::{MetricError, MetricsReport};
use crate::numerics::{rng_from_seed, Graph, NodeId, NumericsError, ParamTensors, Rng, Tensor};
use crate::treelstm::{classify, encode_tree, node_inputs, LstmParamIds, LstmParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which validation score picks the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMetric {
    MacroF1,
    Auc,
}

impl std::str::FromStr for SelectMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro_f1" | "macro-f1" => Ok(SelectMetric::MacroF1),
            "auc" => Ok(SelectMetric::Auc),
            other => Err(format!("unknown select metric {other:?}, expected macro_f1 or auc")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the auxiliary target-replication term; active only when
    /// `replication_level > 0`.
    pub lambda: f64,
    /// Depth whose nodes receive replicated targets; 0 turns the term off.
    pub replication_level: usize,
    pub select_metric: SelectMetric,
}

impl TrainConfig {
    /// Defaults keyed on granularity: sentence trees are shallow and wide,
    /// word trees deep and narrow.
    pub fn defaults(granularity: LeafGranularity) -> Self {
        let (batch_size, hidden_dim) = match granularity {
            LeafGranularity::Sentence => (64, 128),
            LeafGranularity::Word => (32, 64),
        };
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            batch_size,
            hidden_dim,
            epochs: 30,
            seed: 42,
            lambda: 0.5,
            replication_level: 0,
            select_metric: SelectMetric::MacroF1,
        }
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value.parse().map_err(|_| TrainError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "replication_level" => self.replication_level = parse(key, value)?,
            "select_metric" => {
                self.select_metric = value.parse().map_err(TrainError::Config)?;
            }
            other => return Err(TrainError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Read a flat `key = value` file. `#` starts a comment, blank lines are
    /// skipped. Returns how many keys were applied.
    pub fn load_kv<R: BufRead>(&mut self, reader: R) -> Result<usize, TrainError> {
        let mut applied = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim().to_string();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| TrainError::Config(format!("config line {}: {e}", i + 1)))?;
            applied += 1;
        }
        Ok(applied)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative and finite");
        }
        if !self.lambda.is_finite() {
            return bad("lambda must be finite");
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.epochs == 0 {
            return bad("batch_size, hidden_dim and epochs must be at least 1");
        }
        Ok(())
    }
}

/// Shuffled 80/10/10 index split (floor for train and validation, remainder
/// to test).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, rng: &mut Rng) -> Split {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Split { train: idx, val, test }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new<P: ParamTensors>(params: &P) -> Self {
        let zeros: Vec<Tensor> =
            params.params().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with coupled L2 (the decay term joins the gradient before
/// the moment updates). Rejects non-finite gradients.
pub fn adam_step<P: ParamTensors>(
    params: &mut P,
    grads: &[Tensor],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    let mut tensors = params.params_mut();
    if grads.len() != tensors.len() {
        return Err(TrainError::Config(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for (g, t) in grads.iter().zip(tensors.iter()) {
        if !g.same_shape(t) {
            return Err(TrainError::Config("gradient shape mismatch".into()));
        }
        if !g.is_finite() {
            return Err(TrainError::Numerics(NumericsError::NonFinite {
                context: "gradients".into(),
            }));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, theta) in tensors.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].data();
        let th = theta.data_mut();
        for k in 0..th.len() {
            let grad = g[k] + weight_decay * th[k];
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad * grad;
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            th[k] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Total loss with replicated targets: root loss plus lambda/n times the sum
/// of the given intermediate losses. With lambda zero or nothing to add, the
/// root loss node is returned untouched, so the plain objective is preserved
/// bit for bit.
pub fn replicated_loss(
    g: &mut Graph,
    root_loss: NodeId,
    intermediate: &[NodeId],
    lambda: f64,
) -> Result<NodeId, NumericsError> {
    if lambda == 0.0 || intermediate.is_empty() {
        return Ok(root_loss);
    }
    let total = g.sum(intermediate)?;
    let scaled = g.scale(total, lambda / intermediate.len() as f64);
    g.add(root_loss, scaled)
}

enum ParamIds {
    Lstm(LstmParamIds),
    Mlp(MlpParamIds),
}

impl ParamIds {
    fn insert(g: &mut Graph, params: &ModelParams) -> Self {
        match params {
            ModelParams::Lstm(p) => ParamIds::Lstm(LstmParamIds::insert(g, p)),
            ModelParams::Mlp(p) => ParamIds::Mlp(MlpParamIds::insert(g, p)),
        }
    }

    fn grads(&self, g: &Graph) -> Vec<Tensor> {
        match self {
            ParamIds::Lstm(ids) => ids.grads(g),
            ParamIds::Mlp(ids) => ids.grads(g),
        }
    }
}

/// Loss node and class probabilities for one document under one model.
fn doc_objective(
    g: &mut Graph,
    model: &ModelSpec,
    ids: &ParamIds,
    tree: &DocTree,
    leaf_vecs: &[(usize, Tensor)],
    lambda: f64,
    replication_level: usize,
) -> Result<(NodeId, Vec<f64>), TrainError> {
    match (model, ids) {
        (ModelSpec::Tree { variant }, ParamIds::Lstm(ids)) => {
            let inputs = node_inputs(tree, *variant, leaf_vecs)?;
            let traces = encode_tree(g, tree, &inputs, ids)?;
            let (root_loss, probs) = classify(g, traces[0].h, ids, tree.label)?;
            if replication_level == 0 || lambda == 0.0 {
                return Ok((root_loss, probs));
            }
            let mut intermediate = Vec::new();
            for node in tree.nodes_at_depth(replication_level) {
                let (loss, _) = classify(g, traces[node.id].h, ids, tree.label)?;
                intermediate.push(loss);
            }
            let total = replicated_loss(g, root_loss, &intermediate, lambda)?;
            Ok((total, probs))
        }
        (ModelSpec::SeqLstm, ParamIds::Lstm(ids)) => {
            let xs = leaf_sequence(tree, leaf_vecs)?;
            let last = seq_lstm_forward(g, ids, &xs)?;
            let (loss, probs) = classify(g, last.h, ids, tree.label)?;
            Ok((loss, probs))
        }
        (ModelSpec::Mlp { pooling }, ParamIds::Mlp(ids)) => {
            let v = doc_vector(tree, leaf_vecs, *pooling)?;
            let xi = g.leaf(v);
            let (loss, probs) = mlp_forward(g, ids, xi, tree.label)?;
            Ok((loss, probs))
        }
        _ => Err(TrainError::Config("model kind does not match parameter family".into())),
    }
}

/// Mean loss and mean gradients over one batch. Documents are processed in
/// parallel but summed strictly in batch order: sums first, one scale at the
/// end, so a batch equals the mean of its per-document gradients exactly.
pub fn batch_gradients(
    model: &ModelSpec,
    params: &ModelParams,
    batch: &[(&DocTree, &[(usize, Tensor)])],
    lambda: f64,
    replication_level: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Data("empty batch".into()));
    }
    let per_doc: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|(tree, leaf_vecs)| -> Result<(f64, Vec<Tensor>), TrainError> {
            let mut g = Graph::new();
            let ids = ParamIds::insert(&mut g, params);
            let (loss, _) =
                doc_objective(&mut g, model, &ids, tree, leaf_vecs, lambda, replication_level)?;
            g.backward(loss)?;
            Ok((g.scalar_value(loss), ids.grads(&g)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut grad_sum = per_doc[0].1.clone();
    loss_sum += per_doc[0].0;
    for (loss, grads) in &per_doc[1..] {
        loss_sum += loss;
        for (acc, g) in grad_sum.iter_mut().zip(grads) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    for t in grad_sum.iter_mut() {
        for a in t.data_mut() {
            *a *= scale;
        }
    }
    Ok((loss_sum * scale, grad_sum))
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl EpochLog {
    fn new(epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        EpochLog { epoch, split: split.into(), metric: metric.into(), value }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log entry serializes")
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_value: f64,
    pub split: Split,
    pub classes: usize,
}

enum LiveParams {
    Lstm(LstmParams),
    Mlp(MlpParams),
}

impl LiveParams {
    fn to_model_params(&self) -> ModelParams {
        match self {
            LiveParams::Lstm(p) => ModelParams::Lstm(p.clone()),
            LiveParams::Mlp(p) => ModelParams::Mlp(p.clone()),
        }
    }
}

/// Train one model over a corpus. Every epoch logs train loss and validation
/// score(s) through `on_log`; the checkpoint holds the parameters of the best
/// validation epoch (earliest wins ties).
pub fn train<F: FnMut(&EpochLog)>(
    corpus: &[DocTree],
    store: &EmbeddingStore,
    model: ModelSpec,
    cfg: &TrainConfig,
    mut on_log: F,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::Data("empty corpus".into()));
    }
    let granularity = corpus[0].leaf_granularity;
    if corpus.iter().any(|t| t.leaf_granularity != granularity) {
        return Err(TrainError::Data("corpus mixes leaf granularities".into()));
    }
    let classes = corpus.iter().map(|t| t.label).max().expect("nonempty") + 1;
    if classes < 2 {
        return Err(TrainError::Data("corpus holds a single class".into()));
    }
    if cfg.select_metric == SelectMetric::Auc && classes != 2 {
        return Err(TrainError::Config(format!(
            "select_metric auc needs exactly 2 classes, corpus has {classes}"
        )));
    }

    let leaf_vecs: Vec<Vec<(usize, Tensor)>> = corpus
        .par_iter()
        .map(|t| store.leaf_vectors(t))
        .collect::<Result<Vec<_>, _>>()?;
    let e = leaf_vecs[0][0].1.rows();
    for (i, lv) in leaf_vecs.iter().enumerate() {
        if lv.iter().any(|(_, v)| v.rows() != e) {
            return Err(TrainError::Data(format!("document {i} mixes embedding widths")));
        }
    }

    // Single randomness stream: split, then init, then epoch shuffles.
    let mut rng = rng_from_seed(cfg.seed);
    let split = split_indices(corpus.len(), &mut rng);
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(TrainError::Data(format!(
            "corpus of {} cannot fill an 80/10/10 split",
            corpus.len()
        )));
    }
    let mut params = match model {
        ModelSpec::Mlp { .. } => {
            LiveParams::Mlp(MlpParams::init(e, cfg.hidden_dim, classes, &mut rng))
        }
        _ => LiveParams::Lstm(LstmParams::init(e, cfg.hidden_dim, classes, &mut rng)),
    };

    let mut seen = vec![false; classes];
    for &i in &split.train {
        seen[corpus[i].label] = true;
    }
    for (label, present) in seen.iter().enumerate() {
        if !present {
            log::warn!("class {label} absent from the training split");
        }
    }
    if cfg.replication_level > 0 && cfg.lambda != 0.0 {
        if !matches!(model, ModelSpec::Tree { .. }) {
            log::warn!("replication_level only affects tree models; ignored here");
        } else {
            let shallow =
                corpus.iter().filter(|t| t.max_depth() < cfg.replication_level).count();
            if shallow > 0 {
                log::warn!(
                    "replication_level {} exceeds the depth of {shallow} documents; \
                     their auxiliary term is zero",
                    cfg.replication_level
                );
            }
        }
    }

    let mut adam = match &params {
        LiveParams::Lstm(p) => AdamState::new(p),
        LiveParams::Mlp(p) => AdamState::new(p),
    };
    let mut history = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    let mut best = params.to_model_params();

    let mut order = split.train.clone();
    for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&DocTree, &[(usize, Tensor)])> =
                chunk.iter().map(|&i| (&corpus[i], leaf_vecs[i].as_slice())).collect();
            let snapshot = params.to_model_params();
            let (mean_loss, grads) = batch_gradients(
                &model,
                &snapshot,
                &batch,
                cfg.lambda,
                cfg.replication_level,
            )?;
            loss_sum += mean_loss * chunk.len() as f64;
            match &mut params {
                LiveParams::Lstm(p) => {
                    adam_step(p, &grads, &mut adam, cfg.learning_rate, cfg.weight_decay)?
                }
                LiveParams::Mlp(p) => {
                    adam_step(p, &grads, &mut adam, cfg.learning_rate, cfg.weight_decay)?
                }
            }
        }
        let train_loss = loss_sum / split.train.len() as f64;
        let entry = EpochLog::new(epoch, "train", "loss", train_loss);
        on_log(&entry);
        history.push(entry);

        let snapshot = params.to_model_params();
        let probs: Vec<Vec<f64>> = split
            .val
            .par_iter()
            .map(|&i| -> Result<Vec<f64>, TrainError> {
                let mut g = Graph::new();
                let ids = ParamIds::insert(&mut g, &snapshot);
                let (_, probs) =
                    doc_objective(&mut g, &model, &ids, &corpus[i], &leaf_vecs[i], 0.0, 0)?;
                Ok(probs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<usize> = split.val.iter().map(|&i| corpus[i].label).collect();
        let report = MetricsReport::from_probs(&labels, &probs, classes)?;

        let entry = EpochLog::new(epoch, "val", "macro_f1", report.macro_f1);
        on_log(&entry);
        history.push(entry);
        if let Some(auc) = report.auc {
            let entry = EpochLog::new(epoch, "val", "auc", auc);
            on_log(&entry);
            history.push(entry);
        }

        let value = match cfg.select_metric {
            SelectMetric::MacroF1 => report.macro_f1,
            SelectMetric::Auc => report.auc.ok_or_else(|| {
                TrainError::Data("validation slice holds one class, auc undefined".into())
            })?,
        };
        if value > best_value {
            best_value = value;
            best_epoch = epoch;
            best = params.to_model_params();
        }
    }

    let checkpoint = Checkpoint::new(model, granularity, cfg.seed, best)?;
    Ok(TrainOutcome { checkpoint, history, best_epoch, best_value, split, classes })
}

/// Class probabilities for every document, in corpus order.
pub fn predict_corpus(
    ckpt: &Checkpoint,
    corpus: &[DocTree],
    store: &EmbeddingStore,
) -> Result<Vec<Vec<f64>>, TrainError> {
    corpus
        .par_iter()
        .map(|t| ckpt.predict_probs(t, store))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Into::into)
}

/// Score a checkpoint over a corpus slice.
pub fn evaluate(
    ckpt: &Checkpoint,
    corpus: &[DocTree],
    store: &EmbeddingStore,
) -> Result<MetricsReport, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Data("nothing to evaluate".into()));
    }
    let classes = ckpt.dims.l;
    if let Some(t) = corpus.iter().find(|t| t.label >= classes) {
        return Err(TrainError::Config(format!(
            "label {} outside the model's {classes} classes",
            t.label
        )));
    }
    let probs = predict_corpus(ckpt, corpus, store)?;
    let labels: Vec<usize> = corpus.iter().map(|t| t.label).collect();
    Ok(MetricsReport::from_probs(&labels, &probs, classes)?)
}
