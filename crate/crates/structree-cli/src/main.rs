//! structree: prepare document corpora, train tree and baseline models,
//! evaluate checkpoints, and export attention reports.
//!
//! Exit codes: 0 success, 1 usage or config, 2 data, 3 numeric failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use structree::baselines::Pooling;
use structree::checkpoint::{Checkpoint, ModelError, ModelSpec};
use structree::doctree::{
    doc_stats, parse_json_tree, parse_sectioned_text, passes_length_filter, read_corpus,
    synth_corpus, write_corpus, DocTree, LengthThresholds, NodeKind, SynthShape,
};
use structree::embeddings::{corpus_vocabulary, EmbeddingStore};
use structree::numerics::{rng_from_seed, NumericsError};
use structree::training::{
    evaluate, split_indices, train, SelectMetric, TrainConfig, TrainError,
};
use structree::treelstm::{count_params, ModelKind, Variant};
use structree::{attention_report, render_html};

#[derive(Parser)]
#[command(name = "structree", version, about = "Tree LSTMs over document structure")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse raw documents from a directory into a JSON-lines corpus.
    Prepare(PrepareArgs),
    /// Generate a synthetic labeled corpus with a planted section signal.
    Synth(SynthArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on a corpus split and write metrics JSON.
    Eval(EvalArgs),
    /// Export attention JSON and HTML for chosen documents.
    Viz(VizArgs),
    /// Print the parameter count of a model shape.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// One tree per .json file, or many per .jsonl file.
    Json,
    /// Plain text with = Heading = sections (.txt); the label is taken from
    /// the file's parent directory name when that is an integer.
    Sectioned,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    TreeLstm,
    SeqLstm,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Non-leaf nodes read a zero input vector.
    Zero,
    /// Non-leaf nodes read the average of their children's inputs.
    Average,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Unweighted,
    Hierarchical,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectArg {
    #[value(name = "macro-f1", alias = "macro_f1")]
    MacroF1,
    Auc,
}

#[derive(clap::Args)]
struct PrepareArgs {
    /// Directory scanned recursively for input files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Corpus file to write (JSON lines, one tree each).
    #[arg(long, default_value = "corpus.jsonl")]
    out: PathBuf,
    /// Drop documents below the length thresholds.
    #[arg(long)]
    filter: bool,
    #[arg(long, default_value_t = 2)]
    min_sections: usize,
    #[arg(long, default_value_t = 3)]
    min_paragraphs: usize,
    #[arg(long, default_value_t = 5)]
    min_sentences: usize,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, env = "STRUCTREE_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "synth.jsonl")]
    out: PathBuf,
    /// Sections per document as min,max (the signal section included).
    #[arg(long, value_parser = parse_range, default_value = "4,6")]
    sections: (usize, usize),
    /// Paragraphs per section as min,max.
    #[arg(long, value_parser = parse_range, default_value = "2,3")]
    paragraphs: (usize, usize),
    /// Sentences per paragraph as min,max.
    #[arg(long, value_parser = parse_range, default_value = "2,4")]
    sentences: (usize, usize),
    /// Words per sentence as min,max.
    #[arg(long, value_parser = parse_range, default_value = "5,9")]
    words: (usize, usize),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "tree-lstm")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "zero")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "unweighted")]
    pooling: PoolingArg,
    /// Word vectors in word2vec text format; omitted = seeded random vectors.
    #[arg(long, env = "STRUCTREE_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    /// Dimension of the seeded random vectors (without --embeddings).
    #[arg(long, env = "STRUCTREE_EMBED_DIM", default_value_t = 24)]
    embed_dim: usize,
    /// Flat key = value config file; flags and env override it.
    #[arg(long, env = "STRUCTREE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.json")]
    out: PathBuf,
    /// Epoch log, one JSON object per line.
    #[arg(long, default_value = "train_log.jsonl")]
    log: PathBuf,

    #[arg(long, env = "STRUCTREE_LEARNING_RATE")]
    learning_rate: Option<f64>,
    #[arg(long, env = "STRUCTREE_WEIGHT_DECAY")]
    weight_decay: Option<f64>,
    #[arg(long, env = "STRUCTREE_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "STRUCTREE_HIDDEN_DIM")]
    hidden_dim: Option<usize>,
    #[arg(long, env = "STRUCTREE_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "STRUCTREE_LAMBDA")]
    lambda: Option<f64>,
    #[arg(long, env = "STRUCTREE_REPLICATION_LEVEL")]
    replication_level: Option<usize>,
    #[arg(long, env = "STRUCTREE_SELECT_METRIC", value_enum)]
    select_metric: Option<SelectArg>,
    #[arg(long, env = "STRUCTREE_SEED")]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Which slice of the seeded 80/10/10 split to score. The split is
    /// recomputed from the checkpoint's seed, so it matches training when the
    /// corpus file is the same.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, env = "STRUCTREE_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct VizArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Document indices into the corpus file, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<usize>,
    #[arg(long, env = "STRUCTREE_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "viz")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct ParamsArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    e: usize,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    l: usize,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected min,max, got {s:?}"))?;
    let lo = lo.trim().parse().map_err(|_| format!("bad min in {s:?}"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad max in {s:?}"))?;
    Ok((lo, hi))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Train(TrainError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Train(e) => write!(f, "{e}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Train(TrainError::Model(e))
    }
}

fn numerics_exit(e: &NumericsError) -> i32 {
    match e {
        NumericsError::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn model_exit(e: &ModelError) -> i32 {
    match e {
        ModelError::Numerics(n) => numerics_exit(n),
        ModelError::Io(_) | ModelError::Json(_) | ModelError::Embed(_) => 2,
        // Wrong checkpoint for this corpus or command: a config problem.
        _ => 1,
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Train(e) => match e {
                TrainError::Config(_) => 1,
                TrainError::Numerics(n) => numerics_exit(n),
                TrainError::Model(m) => model_exit(m),
                _ => 2,
            },
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Cmd::Prepare(args) => run_prepare(args),
        Cmd::Synth(args) => run_synth(args),
        Cmd::Train(args) => run_train(*args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::Viz(args) => run_viz(args),
        Cmd::Params(args) => run_params(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn read_corpus_file(path: &Path) -> Result<Vec<DocTree>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("corpus {}: {e}", path.display())))?;
    read_corpus(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("corpus {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load_path(path)
        .map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", path.display())))
}

/// The store every model reads from: a word2vec text file when given, else
/// random vectors seeded from `seed` over the corpus vocabulary (rebuildable
/// from the same corpus and seed alone).
fn build_store(
    corpus: &[DocTree],
    embeddings: Option<&Path>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingStore, CliError> {
    match embeddings {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| CliError::Data(format!("embeddings {}: {e}", path.display())))?;
            EmbeddingStore::load_word2vec_text(BufReader::new(file))
                .map_err(|e| CliError::Data(format!("embeddings {}: {e}", path.display())))
        }
        None => {
            let vocab = corpus_vocabulary(corpus);
            let mut rng = rng_from_seed(seed);
            Ok(EmbeddingStore::random(&vocab, dim, &mut rng))
        }
    }
}

/// Random-store dimension that reproduces a checkpoint's input width.
/// Patient trees append one category entry per leaf vector.
fn store_dim_for(ckpt: &Checkpoint, corpus: &[DocTree]) -> usize {
    let patient = corpus.first().map(|t| t.root.kind == NodeKind::Patient).unwrap_or(false);
    if patient {
        ckpt.dims.e.saturating_sub(1)
    } else {
        ckpt.dims.e
    }
}

fn percentile(sorted: &[usize], p: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("input {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|r| r.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(format!("input {}: {e}", dir.display())))?;
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Label for a sectioned file: its parent directory's name, when numeric.
fn label_from_dir(path: &Path) -> usize {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| {
            log::warn!("{}: parent directory is not a class index, label 0", path.display());
            0
        })
}

fn run_prepare(args: PrepareArgs) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_files(&args.input, &mut files)?;

    let thresholds = LengthThresholds {
        min_sections: args.min_sections,
        min_paragraphs: args.min_paragraphs,
        min_sentences: args.min_sentences,
    };
    let mut corpus: Vec<DocTree> = Vec::new();
    let mut skipped = 0usize;
    let mut filtered = 0usize;
    for path in &files {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let parsed: Result<Vec<DocTree>, String> = match (args.format, ext) {
            (FormatArg::Json, "json") => std::fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|s| parse_json_tree(&s).map(|t| vec![t]).map_err(|e| e.to_string())),
            (FormatArg::Json, "jsonl") => File::open(path)
                .map_err(|e| e.to_string())
                .and_then(|f| read_corpus(BufReader::new(f)).map_err(|e| e.to_string())),
            (FormatArg::Sectioned, "txt") => std::fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|s| parse_sectioned_text(&s).map_err(|e| e.to_string()))
                .map(|mut t| {
                    t.label = label_from_dir(path);
                    vec![t]
                }),
            _ => continue,
        };
        match parsed {
            Ok(trees) => {
                for tree in trees {
                    if args.filter && !passes_length_filter(&tree, &thresholds) {
                        filtered += 1;
                    } else {
                        corpus.push(tree);
                    }
                }
            }
            Err(e) => {
                log::warn!("{}: {e}; skipped", path.display());
                skipped += 1;
            }
        }
    }
    if corpus.is_empty() {
        return Err(CliError::Data(format!(
            "no documents survived ({} files, {skipped} unparsable, {filtered} filtered)",
            files.len()
        )));
    }

    let out = File::create(&args.out)
        .map_err(|e| CliError::Data(format!("out {}: {e}", args.out.display())))?;
    write_corpus(BufWriter::new(out), &corpus)
        .map_err(|e| CliError::Data(format!("out {}: {e}", args.out.display())))?;

    println!(
        "prepared {} documents -> {} ({skipped} unparsable, {filtered} filtered)",
        corpus.len(),
        args.out.display()
    );
    let mut per_class = std::collections::BTreeMap::new();
    for t in &corpus {
        *per_class.entry(t.label).or_insert(0usize) += 1;
    }
    for (label, count) in per_class {
        println!("class {label}: {count}");
    }
    let stats: Vec<_> = corpus.iter().map(doc_stats).collect();
    let columns = [
        ("sections", stats.iter().map(|s| s.sections).collect::<Vec<_>>()),
        ("paragraphs", stats.iter().map(|s| s.paragraphs).collect()),
        ("sentences", stats.iter().map(|s| s.sentences).collect()),
    ];
    for (name, mut values) in columns {
        values.sort_unstable();
        println!(
            "{name}: p50 {} p90 {}",
            percentile(&values, 0.5),
            percentile(&values, 0.9)
        );
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let shape = SynthShape {
        sections: args.sections,
        paragraphs: args.paragraphs,
        sentences: args.sentences,
        words: args.words,
    };
    let mut rng = rng_from_seed(args.seed);
    let corpus = synth_corpus(args.docs, args.classes, &shape, &mut rng)
        .map_err(|e| CliError::Usage(format!("synth: {e}")))?;
    let out = File::create(&args.out)
        .map_err(|e| CliError::Data(format!("out {}: {e}", args.out.display())))?;
    write_corpus(BufWriter::new(out), &corpus)
        .map_err(|e| CliError::Data(format!("out {}: {e}", args.out.display())))?;
    println!(
        "wrote {} documents, {} classes -> {}",
        args.docs,
        args.classes,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let corpus = read_corpus_file(&args.corpus)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!("corpus {} is empty", args.corpus.display())));
    }

    let mut cfg = TrainConfig::defaults(corpus[0].leaf_granularity);
    if let Some(path) = &args.config {
        let file = File::open(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.load_kv(BufReader::new(file))?;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.replication_level {
        cfg.replication_level = v;
    }
    if let Some(v) = args.select_metric {
        cfg.select_metric = match v {
            SelectArg::MacroF1 => SelectMetric::MacroF1,
            SelectArg::Auc => SelectMetric::Auc,
        };
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }

    let model = match args.model {
        ModelArg::TreeLstm => ModelSpec::Tree {
            variant: match args.variant {
                VariantArg::Zero => Variant::ZeroVectors,
                VariantArg::Average => Variant::HierarchicalAverage,
            },
        },
        ModelArg::SeqLstm => ModelSpec::SeqLstm,
        ModelArg::Mlp => ModelSpec::Mlp {
            pooling: match args.pooling {
                PoolingArg::Unweighted => Pooling::Unweighted,
                PoolingArg::Hierarchical => Pooling::Hierarchical,
            },
        },
    };

    let store = build_store(&corpus, args.embeddings.as_deref(), args.embed_dim, cfg.seed)?;
    let log_file = File::create(&args.log)
        .map_err(|e| CliError::Data(format!("log {}: {e}", args.log.display())))?;
    let mut log_writer = BufWriter::new(log_file);

    let mut log_error: Option<std::io::Error> = None;
    let outcome = train(&corpus, &store, model, &cfg, |entry| {
        log::info!("{}", entry.to_json_line());
        if log_error.is_none() {
            if let Err(e) = writeln!(log_writer, "{}", entry.to_json_line()) {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(CliError::Data(format!("log {}: {e}", args.log.display())));
    }
    log_writer
        .flush()
        .map_err(|e| CliError::Data(format!("log {}: {e}", args.log.display())))?;

    outcome.checkpoint.save_path(&args.out)?;
    println!(
        "trained {} for {} epochs; best epoch {} (validation {:.4}); checkpoint -> {}",
        outcome.checkpoint.model.describe(),
        cfg.epochs,
        outcome.best_epoch,
        outcome.best_value,
        args.out.display()
    );
    Ok(())
}

fn split_slice<'a>(
    corpus: &'a [DocTree],
    which: SplitArg,
    seed: u64,
) -> Vec<&'a DocTree> {
    if matches!(which, SplitArg::All) {
        return corpus.iter().collect();
    }
    let split = split_indices(corpus.len(), &mut rng_from_seed(seed));
    let idx = match which {
        SplitArg::Train => &split.train,
        SplitArg::Val => &split.val,
        SplitArg::Test => &split.test,
        SplitArg::All => unreachable!(),
    };
    idx.iter().map(|&i| &corpus[i]).collect()
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let corpus = read_corpus_file(&args.corpus)?;
    let store = build_store(
        &corpus,
        args.embeddings.as_deref(),
        store_dim_for(&ckpt, &corpus),
        ckpt.seed,
    )?;
    let subset: Vec<DocTree> =
        split_slice(&corpus, args.split, ckpt.seed).into_iter().cloned().collect();
    let report = evaluate(&ckpt, &subset, &store)?;
    let json = report.to_json_string();
    std::fs::write(&args.out, format!("{json}\n"))
        .map_err(|e| CliError::Data(format!("out {}: {e}", args.out.display())))?;
    println!("{json}");
    Ok(())
}

fn run_viz(args: VizArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let corpus = read_corpus_file(&args.corpus)?;
    let store = build_store(
        &corpus,
        args.embeddings.as_deref(),
        store_dim_for(&ckpt, &corpus),
        ckpt.seed,
    )?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("out dir {}: {e}", args.out_dir.display())))?;
    for &id in &args.ids {
        let tree = corpus.get(id).ok_or_else(|| {
            CliError::Data(format!("document {id} outside corpus of {}", corpus.len()))
        })?;
        let atree = attention_report(&ckpt, tree, &store)?;
        let json_path = args.out_dir.join(format!("{id}.json"));
        let html_path = args.out_dir.join(format!("{id}.html"));
        std::fs::write(&json_path, format!("{}\n", atree.to_json_string()))
            .map_err(|e| CliError::Data(format!("{}: {e}", json_path.display())))?;
        std::fs::write(&html_path, render_html(&atree))
            .map_err(|e| CliError::Data(format!("{}: {e}", html_path.display())))?;
        println!("wrote {} and {}", json_path.display(), html_path.display());
    }
    Ok(())
}

fn run_params(args: ParamsArgs) -> Result<(), CliError> {
    let kind = match args.model {
        ModelArg::TreeLstm => ModelKind::TreeLstm,
        ModelArg::SeqLstm => ModelKind::SeqLstm,
        ModelArg::Mlp => ModelKind::Mlp,
    };
    if args.e == 0 || args.h == 0 || args.l == 0 {
        return Err(CliError::Usage("--e, --h and --l must be positive".into()));
    }
    println!("{}", count_params(kind, args.e, args.h, args.l));
    Ok(())
}
