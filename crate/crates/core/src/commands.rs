//! The operations behind the `mire` binary.
//!
//! Each command takes a plain argument struct (also usable from code),
//! writes its outputs and a [`RunManifest`] next to them, and returns a
//! short summary. Every command is deterministic given its inputs and seed;
//! only the manifest timestamps differ between reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding_io::{
    read_jsonl, synth_clustered_corpus, synth_planted_dataset, write_jsonl, ClusteredCorpusConfig,
    EmbeddingCollection, EmbeddingKind, GoldPair, PassageRecord, PlantedConfig, QueryImage, TokenMatrix,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_passage_texts, load_records, EvalConfig, GoldAnswers, GoldMode};
use crate::index::{CompressedIndex, IndexConfig, DEFAULT_NPROBE};
use crate::late_interaction::{search_exact, write_tsv, RankedList};
use crate::numerics::{l2_normalize_rows, Matrix, Rng};
use crate::qap::{assemble_query, load_checkpoint, Activation, MultimodalQueryInput, PoolingDims, PoolingParams, Stage};
use crate::r2p::text::word_tokens;
use crate::r2p::toy::{toy_dialogues, toy_knowledge_base};
use crate::r2p::{build_dataset, write_dataset, DatasetRecord, R2pConfig};
use crate::training::{
    continue_training, mean_loss, write_loss_csv, write_planted_dir, AlignmentDataset, TrainConfig, Trainer,
    GLOBAL_FILE, GOLD_FILE, PASSAGE_FILE, PATCH_FILE, QUERIES_FILE, TEXT_FILE,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSS_FILE: &str = "loss.csv";
/// Passage texts written by [`cmd_embed`], for answer-mode evaluation.
pub const PASSAGE_TEXT_FILE: &str = "passages.jsonl";
/// Answer gold written by [`cmd_embed`].
pub const ANSWERS_FILE: &str = "answers.jsonl";

/// Provenance record written by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its contents. Directories hash the sorted
    /// list of their files' names and digests.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Usage(format!("input path {} does not exist", path.display())))
    }
}

/// SHA-256 of a file, or of a directory's sorted `name digest` lines.
pub fn digest_path(path: &Path) -> Result<String> {
    require_exists(path)?;
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(path, e)))
            .collect::<Result<_>>()?;
        entries.sort();
        let mut h = Sha256::new();
        for p in entries {
            if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                continue;
            }
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update(format!("{name} {}\n", digest_path(&p)?));
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Where the manifest for an output goes: inside an output directory, or
/// beside an output file as `<file>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(MANIFEST_FILE)
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".");
        name.push(MANIFEST_FILE);
        output.with_file_name(name)
    }
}

struct Run {
    command: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    started: u64,
}

impl Run {
    fn start(command: &'static str, config: &impl Serialize, inputs: &[&Path], seed: Option<u64>) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), digest_path(p)?);
        }
        Ok(Self { command, config: serde_json::to_value(config)?, inputs: digests, seed, started: unix_now() })
    }

    fn finish(self, output: &Path) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let path = manifest_path(output);
        fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a JSON or TOML config file (by extension, `.toml` for TOML).
pub fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    require_exists(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::Parse { path: path.into(), line: 0, msg: e.to_string() })?;
        Ok(serde_json::to_value(v)?)
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
    }
}

/// Recursively overlays `top` onto `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Defaults, then the config file, then flag overrides (flags win).
fn layered<T: Serialize + for<'de> Deserialize<'de>>(
    defaults: &T,
    file: Option<&Path>,
    flags: serde_json::Value,
) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(f) = file {
        merge(&mut v, read_config_value(f)?);
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| Error::Usage(format!("invalid configuration: {e}")))
}

/// Flag overrides as a JSON object, skipping unset options.
fn overrides(pairs: &[(&str, Option<serde_json::Value>)]) -> serde_json::Value {
    serde_json::Value::Object(pairs.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect())
}

// ---------------------------------------------------------------- synth

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Planted-concept alignment dataset directory.
    Planted,
    /// Clustered passage corpus with noisy-copy text queries.
    Corpus,
    /// Toy knowledge base and dialogue file for dataset construction.
    R2pToy,
}

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Images (planted), passages (corpus) or knowledge-base passages (r2p-toy).
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Concepts per image (planted), queries (corpus) or dialogue images (r2p-toy).
    #[arg(long, default_value_t = 4)]
    pub secondary: usize,
    #[arg(long, default_value_t = 128)]
    pub dim_t: usize,
    #[arg(long, default_value_t = 256)]
    pub dim_v: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Writes a synthetic dataset; returns a one-line summary.
pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let run = Run::start("synth", args, &[], Some(args.seed))?;
    create_dir(&args.out)?;
    let summary = match args.kind {
        SynthKind::Planted => {
            let cfg = PlantedConfig::new(args.size, args.secondary, args.dim_t, args.dim_v, args.seed);
            let d = synth_planted_dataset(&cfg)?;
            write_planted_dir(&args.out, &d)?;
            format!("{} queries over {} images", d.gold.len(), args.size)
        }
        SynthKind::Corpus => {
            let cfg = ClusteredCorpusConfig::new(args.size, args.dim_t, args.secondary, args.seed);
            let c = synth_clustered_corpus(&cfg)?;
            c.passages.write(args.out.join(PASSAGE_FILE))?;
            c.queries.write(args.out.join(TEXT_FILE))?;
            let gold: Vec<GoldPair> = c
                .queries
                .iter()
                .zip(&c.sources)
                .map(|(q, &s)| GoldPair { query_id: q.id.clone(), passage_id: c.passages.records()[s].id.clone() })
                .collect();
            write_jsonl(args.out.join(GOLD_FILE), &gold)?;
            format!("{} passages, {} queries", c.passages.len(), c.queries.len())
        }
        SynthKind::R2pToy => {
            let kb = toy_knowledge_base(args.size, args.seed);
            let qa = toy_dialogues(args.secondary, args.seed.wrapping_add(1));
            write_jsonl(args.out.join("kb.jsonl"), &kb)?;
            write_jsonl(args.out.join("qa.jsonl"), &qa)?;
            format!("{} knowledge-base passages, {} dialogue turns", kb.len(), qa.len())
        }
    };
    run.finish(&args.out)?;
    Ok(summary)
}

// ---------------------------------------------------------------- embed

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct EmbedArgs {
    /// Dataset JSONL from `build-dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output training directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub dim_t: usize,
    #[arg(long, default_value_t = 32)]
    pub dim_v: usize,
    #[arg(long, default_value_t = 49)]
    pub patches: usize,
    /// Word tokens kept per passage.
    #[arg(long, default_value_t = 64)]
    pub max_passage_tokens: usize,
}

/// Deterministic pseudo-random unit vector for a string key.
fn hashed_unit(key: &str, dim: usize) -> Vec<f64> {
    let d = Sha256::digest(key.as_bytes());
    let seed = u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"));
    Rng::new(seed).unit_vector(dim)
}

fn hashed_words(text: &str, dim: usize, max: usize) -> Vec<Vec<f32>> {
    let mut words = word_tokens(text);
    words.truncate(max);
    if words.is_empty() {
        words.push(String::new());
    }
    words.iter().map(|w| hashed_unit(&format!("w:{w}"), dim).iter().map(|&x| x as f32).collect()).collect()
}

/// Stand-in encoder: every word maps to a fixed hashed unit vector, and each
/// image to hashed global and patch vectors of norm `sqrt(dim_v)`. It turns a
/// constructed dataset into a training directory without external models,
/// so lexical overlap is the only retrievable signal.
pub fn cmd_embed(args: &EmbedArgs) -> Result<String> {
    let run = Run::start("embed", args, &[&args.dataset], None)?;
    if args.dim_t < 4 || args.dim_v < 4 || args.patches == 0 || args.max_passage_tokens == 0 {
        return Err(Error::Usage("embedding dims must be at least 4 and counts positive".into()));
    }
    let records: Vec<DatasetRecord> = read_jsonl(&args.dataset)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no records", args.dataset.display())));
    }
    create_dir(&args.out)?;
    let mut text = EmbeddingCollection::new(EmbeddingKind::TextQuery, args.dim_t);
    let mut passages = EmbeddingCollection::new(EmbeddingKind::Passage, args.dim_t);
    let mut global = EmbeddingCollection::new(EmbeddingKind::VisualGlobal, args.dim_v);
    let mut patches = EmbeddingCollection::new(EmbeddingKind::VisualPatch, args.dim_v);
    let mut queries = Vec::new();
    let mut gold = Vec::new();
    let mut texts = Vec::new();
    let mut answers = Vec::new();
    let norm = (args.dim_v as f64).sqrt();
    let scaled = |key: String| -> Vec<f32> { hashed_unit(&key, args.dim_v).iter().map(|&x| (x * norm) as f32).collect() };
    for r in &records {
        text.push(TokenMatrix::from_rows(&r.query_id, EmbeddingKind::TextQuery, &hashed_words(&r.query_text, args.dim_t, usize::MAX))?)?;
        if passages.get(&r.passage_id).is_none() {
            let rows = hashed_words(&r.passage, args.dim_t, args.max_passage_tokens);
            passages.push(TokenMatrix::from_rows(&r.passage_id, EmbeddingKind::Passage, &rows)?)?;
            texts.push(PassageRecord { id: r.passage_id.clone(), text: r.passage.clone(), answers: None });
        }
        if global.get(&r.image_id).is_none() {
            global.push(TokenMatrix::new(&r.image_id, EmbeddingKind::VisualGlobal, args.dim_v, scaled(format!("g:{}", r.image_id)))?)?;
            let values = (0..args.patches).flat_map(|j| scaled(format!("p:{}:{j}", r.image_id))).collect();
            patches.push(TokenMatrix::new(&r.image_id, EmbeddingKind::VisualPatch, args.dim_v, values)?)?;
        }
        queries.push(QueryImage { query_id: r.query_id.clone(), image_id: r.image_id.clone() });
        gold.push(GoldPair { query_id: r.query_id.clone(), passage_id: r.passage_id.clone() });
        answers.push(GoldAnswers { query_id: r.query_id.clone(), answers: r.answers.clone() });
    }
    text.write(args.out.join(TEXT_FILE))?;
    passages.write(args.out.join(PASSAGE_FILE))?;
    global.write(args.out.join(GLOBAL_FILE))?;
    patches.write(args.out.join(PATCH_FILE))?;
    write_jsonl(args.out.join(QUERIES_FILE), &queries)?;
    write_jsonl(args.out.join(GOLD_FILE), &gold)?;
    write_jsonl(args.out.join(PASSAGE_TEXT_FILE), &texts)?;
    write_jsonl(args.out.join(ANSWERS_FILE), &answers)?;
    run.finish(&args.out)?;
    Ok(format!("{} queries, {} passages, {} images", queries.len(), passages.len(), global.len()))
}

// ---------------------------------------------------------------- build-index

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct BuildIndexArgs {
    /// Passage embedding file.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output index directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Centroid count; defaults to ceil(4·sqrt(tokens)).
    #[arg(long)]
    pub centroids: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub bits: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub kmeans_iters: usize,
    /// Tokens sampled for centroid training and bucket fitting.
    #[arg(long, default_value_t = 100_000)]
    pub sample_size: usize,
}

pub fn cmd_build_index(args: &BuildIndexArgs) -> Result<String> {
    let run = Run::start("build-index", args, &[&args.corpus], Some(args.seed))?;
    let corpus = EmbeddingCollection::read(&args.corpus)?;
    if corpus.kind() != EmbeddingKind::Passage {
        return Err(Error::Usage(format!("{} holds {} embeddings, not passages", args.corpus.display(), corpus.kind())));
    }
    let config = IndexConfig {
        k_centroids: args.centroids,
        kmeans_iters: args.kmeans_iters,
        sample_size: args.sample_size,
        bits: args.bits,
        seed: args.seed,
    };
    let index = CompressedIndex::build(&corpus, config)?;
    create_dir(&args.out)?;
    index.save(&args.out)?;
    run.finish(&args.out)?;
    let meta = index.meta();
    Ok(format!(
        "{} passages, {} tokens, {} centroids, residual mse {:.3e}",
        meta.num_passages, meta.num_tokens, meta.k, meta.report.mse
    ))
}

// ---------------------------------------------------------------- train-align

/// Shape of the pooling network; text and visual dims come from the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub global_tokens: usize,
    pub heads: usize,
    /// Hidden width of the global MLP; `None` means `d_v`.
    pub hidden: Option<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            global_tokens: PoolingDims::DEFAULT_GLOBAL_TOKENS,
            heads: PoolingDims::DEFAULT_HEADS,
            hidden: None,
            activation: Activation::Silu,
            init_seed: 0,
        }
    }
}

/// Full training configuration as read from a config file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainAlignConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for TrainAlignConfig {
    fn default() -> Self {
        Self { train: TrainConfig::desk(), model: ModelConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct TrainAlignArgs {
    /// Training directory (embedding files, queries.jsonl, gold.jsonl).
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON or TOML file with `train` and `model` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint; its parameters, optimizer state and
    /// step counter carry over.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Batch-order seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Write a checkpoint after every epoch under `out/epoch_NNN`.
    #[arg(long)]
    pub epoch_checkpoints: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub first_epoch_loss: Option<f64>,
    pub last_epoch_loss: Option<f64>,
}

/// Resolves the effective configuration: defaults, then file, then flags.
pub fn train_align_config(args: &TrainAlignArgs) -> Result<TrainAlignConfig> {
    let train = overrides(&[
        ("learning_rate", args.lr.map(Into::into)),
        ("epochs", args.epochs.map(Into::into)),
        ("batch_size", args.batch_size.map(Into::into)),
        ("warmup_steps", args.warmup.map(Into::into)),
        ("temperature", args.temperature.map(Into::into)),
        ("seed", args.seed.map(Into::into)),
    ]);
    let model = overrides(&[("init_seed", args.init_seed.map(Into::into))]);
    let flags = serde_json::json!({ "train": train, "model": model });
    let cfg: TrainAlignConfig = layered(&TrainAlignConfig::default(), args.config.as_deref(), flags)?;
    cfg.train.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_train_align(args: &TrainAlignArgs) -> Result<TrainSummary> {
    let cfg = train_align_config(args)?;
    let mut inputs: Vec<&Path> = vec![&args.dataset];
    inputs.extend(args.config.as_deref());
    inputs.extend(args.resume.as_deref());
    let run = Run::start("train-align", &serde_json::json!({ "args": args, "effective": cfg }), &inputs, Some(cfg.train.seed))?;
    let data = AlignmentDataset::load_dir(&args.dataset)?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training directory has no queries".into()));
    }
    let (d_t, d_v) = data.dims();
    let mut trainer = match &args.resume {
        Some(dir) => {
            let t = Trainer::resume(dir, Some(cfg.train))?;
            if (t.params.dims.d_t, t.params.dims.d_v) != (d_t, d_v) {
                return Err(Error::Usage(format!(
                    "checkpoint dims (d_t {}, d_v {}) do not match the dataset (d_t {d_t}, d_v {d_v})",
                    t.params.dims.d_t, t.params.dims.d_v
                )));
            }
            t
        }
        None => {
            let m = cfg.model;
            let dims = PoolingDims { d_v, d_t, l_g: m.global_tokens, heads: m.heads, hidden: m.hidden.unwrap_or(d_v) };
            Trainer::new(PoolingParams::init(dims, m.activation, m.init_seed)?, cfg.train, m.init_seed)?
        }
    };
    let already = trainer.history.len();
    if trainer.is_finished() {
        create_dir(&args.out)?;
        trainer.save(&args.out)?;
    } else {
        let epoch_dir = args.epoch_checkpoints.then_some(args.out.as_path());
        continue_training(&mut trainer, &data, epoch_dir)?;
        if epoch_dir.is_none() {
            create_dir(&args.out)?;
            trainer.save(&args.out)?;
        }
    }
    let new_steps = &trainer.history[already..];
    write_loss_csv(&args.out.join(LOSS_FILE), new_steps)?;
    let per_epoch = |e: u64| mean_loss(&new_steps.iter().filter(|s| s.epoch == e).copied().collect::<Vec<_>>());
    let summary = TrainSummary {
        steps: trainer.step_count(),
        epochs: trainer.epoch,
        first_epoch_loss: new_steps.first().and_then(|s| per_epoch(s.epoch)),
        last_epoch_loss: new_steps.last().and_then(|s| per_epoch(s.epoch)),
    };
    run.finish(&args.out)?;
    Ok(summary)
}

// ---------------------------------------------------------------- search

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
#[command(group(clap::ArgGroup::new("mode").args(["exact", "compressed"])))]
pub struct SearchArgs {
    /// Query embeddings: a text_query `.emb` file, or a directory holding
    /// text_queries.emb and, for multimodal queries, visual_global.emb,
    /// visual_patch.emb and queries.jsonl.
    #[arg(long)]
    pub queries: PathBuf,
    /// Passage embedding file, for exact search.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Index directory, for compressed search.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Exhaustive MaxSim over `--corpus`.
    #[arg(long)]
    pub exact: bool,
    /// Two-stage search over `--index`.
    #[arg(long)]
    pub compressed: bool,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Centroids probed per query token; 0 probes all of them.
    #[arg(long, default_value_t = DEFAULT_NPROBE)]
    pub nprobe: usize,
    /// Trained pooling checkpoint for multimodal queries.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Ignore visual inputs and search with the text tokens alone.
    #[arg(long)]
    pub text_only: bool,
    /// Output ranking TSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn normalized_rows(t: &TokenMatrix) -> Matrix {
    let mut m = t.to_matrix();
    l2_normalize_rows(&mut m);
    m
}

/// Query token matrices ready for scoring, in input order.
fn load_search_queries(args: &SearchArgs) -> Result<Vec<TokenMatrix>> {
    require_exists(&args.queries)?;
    let (text_path, dir) = if args.queries.is_dir() {
        (args.queries.join(TEXT_FILE), Some(args.queries.as_path()))
    } else {
        (args.queries.clone(), None)
    };
    let text = EmbeddingCollection::read(&text_path)?;
    if text.kind() != EmbeddingKind::TextQuery {
        return Err(Error::Usage(format!("{} holds {} embeddings, not text queries", text_path.display(), text.kind())));
    }
    let visual = dir.filter(|d| d.join(GLOBAL_FILE).exists() || d.join(PATCH_FILE).exists());
    let text_tokens = |t: &TokenMatrix| TokenMatrix::from_matrix(&t.id, EmbeddingKind::TextQuery, &normalized_rows(t));
    match (visual, &args.checkpoint, args.text_only) {
        (_, _, true) | (None, None, false) => text.iter().map(text_tokens).collect(),
        (None, Some(_), false) => Err(Error::Usage("a checkpoint was given but the queries have no visual inputs".into())),
        (Some(_), None, false) => Err(Error::Usage(
            "queries have visual inputs but no checkpoint was given: train one with `mire train-align` \
             and pass --checkpoint, or pass --text-only"
                .into(),
        )),
        (Some(d), Some(ckpt), false) => {
            let (params, _) = load_checkpoint(ckpt)?;
            let global = EmbeddingCollection::read(d.join(GLOBAL_FILE))?;
            let patches = EmbeddingCollection::read(d.join(PATCH_FILE))?;
            let links: Vec<QueryImage> = read_jsonl(d.join(QUERIES_FILE))?;
            let image_of: BTreeMap<&str, &str> = links.iter().map(|l| (l.query_id.as_str(), l.image_id.as_str())).collect();
            use rayon::prelude::*;
            text.records()
                .par_iter()
                .map(|t| {
                    let img = image_of
                        .get(t.id.as_str())
                        .ok_or_else(|| Error::Usage(format!("query {} has no image in {QUERIES_FILE}", t.id)))?;
                    let g = global.get(img).ok_or_else(|| Error::Usage(format!("image {img} has no global embedding")))?;
                    let m = patches.get(img).ok_or_else(|| Error::Usage(format!("image {img} has no patch embeddings")))?;
                    let input = MultimodalQueryInput::new(
                        t.id.clone(),
                        normalized_rows(t),
                        g.values().iter().map(|&v| f64::from(v)).collect(),
                        m.to_matrix(),
                    );
                    let q = assemble_query(&input, &params, Stage::Inference)?;
                    TokenMatrix::from_matrix(&t.id, EmbeddingKind::TextQuery, &q.tokens())
                })
                .collect()
        }
    }
}

pub fn cmd_search(args: &SearchArgs) -> Result<usize> {
    if args.k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    let compressed = match (args.exact, args.compressed, &args.corpus, &args.index) {
        (true, _, None, _) => return Err(Error::Usage("--exact needs --corpus".into())),
        (_, true, _, None) => return Err(Error::Usage("--compressed needs --index".into())),
        (true, _, Some(_), _) => false,
        (_, true, _, Some(_)) => true,
        (false, false, Some(_), None) => false,
        (false, false, None, Some(_)) => true,
        (false, false, Some(_), Some(_)) => return Err(Error::Usage("pass --exact or --compressed".into())),
        (false, false, None, None) => return Err(Error::Usage("pass --corpus or --index".into())),
    };
    let mut inputs: Vec<&Path> = vec![&args.queries];
    inputs.extend(if compressed { args.index.as_deref() } else { args.corpus.as_deref() });
    inputs.extend(args.checkpoint.as_deref());
    let run = Run::start("search", args, &inputs, None)?;
    for p in &inputs {
        require_exists(p)?;
    }
    let queries = load_search_queries(args)?;
    let lists: Vec<RankedList> = if compressed {
        let index = CompressedIndex::load(args.index.as_deref().expect("checked above"))?;
        let nprobe = if args.nprobe == 0 { index.centroids.k() } else { args.nprobe };
        queries.iter().map(|q| index.search(q, args.k, nprobe)).collect::<Result<_>>()?
    } else {
        let corpus = EmbeddingCollection::read(args.corpus.as_deref().expect("checked above"))?;
        queries.iter().map(|q| search_exact(q, &corpus, args.k)).collect::<Result<_>>()?
    };
    create_parent(&args.out)?;
    write_tsv(&args.out, &lists)?;
    run.finish(&args.out)?;
    Ok(lists.len())
}

// ---------------------------------------------------------------- build-dataset

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct BuildDatasetArgs {
    /// Dialogue JSONL: {"image_id", "query", "response", "turn"}.
    #[arg(long)]
    pub qa: PathBuf,
    /// Knowledge-base JSONL: {"id", "text"}.
    #[arg(long)]
    pub kb: PathBuf,
    /// JSON or TOML construction config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Passages retrieved per response.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output dataset JSONL; statistics go to `<out>.stats.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_build_dataset(args: &BuildDatasetArgs) -> Result<crate::r2p::R2pStats> {
    let flags = overrides(&[("k", args.k.map(Into::into))]);
    let config: R2pConfig = layered(&R2pConfig::default(), args.config.as_deref(), flags)?;
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let mut inputs: Vec<&Path> = vec![&args.qa, &args.kb];
    inputs.extend(args.config.as_deref());
    let run = Run::start("build-dataset", &serde_json::json!({ "args": args, "effective": config }), &inputs, None)?;
    let out = build_dataset(&args.qa, &args.kb, None, &config)?;
    create_parent(&args.out)?;
    write_dataset(&args.out, &out.records)?;
    let mut stats_path = args.out.clone().into_os_string();
    stats_path.push(".stats.json");
    write_json(Path::new(&stats_path), &out.stats)?;
    run.finish(&args.out)?;
    Ok(out.stats)
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, Serialize, Deserialize, Args)]
pub struct EvalArgs {
    /// Ranking TSV from `search`.
    #[arg(long)]
    pub ranked: PathBuf,
    /// Gold JSONL: {"query_id", "passage_id"} in passage mode,
    /// {"query_id", "answers"} in answer mode.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value = "passage")]
    pub mode: GoldMode,
    /// Passage texts JSONL ({"id", "text"}); required in answer mode.
    #[arg(long)]
    pub passages: Option<PathBuf>,
    /// Cutoffs for R@k / PR@k.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 20, 50])]
    pub ks: Vec<usize>,
    /// Answers must match on word boundaries.
    #[arg(long)]
    pub word_boundary: bool,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<crate::eval::EvalReport> {
    let mut inputs: Vec<&Path> = vec![&args.ranked, &args.gold];
    inputs.extend(args.passages.as_deref());
    let run = Run::start("eval", args, &inputs, None)?;
    if args.mode == GoldMode::Answer && args.passages.is_none() {
        return Err(Error::Usage("answer mode needs --passages".into()));
    }
    if args.ks.iter().any(|&k| k == 0) {
        return Err(Error::Usage("cutoffs must be at least 1".into()));
    }
    let records = load_records(&args.ranked, &args.gold, args.mode)?;
    let texts = args.passages.as_deref().map(load_passage_texts).transpose()?;
    let config = EvalConfig { mode: args.mode, ks: args.ks.clone(), word_boundary: args.word_boundary };
    let report = evaluate(&records, texts.as_ref(), &config)?;
    create_parent(&args.out)?;
    write_json(&args.out, &report)?;
    run.finish(&args.out)?;
    Ok(report)
}
