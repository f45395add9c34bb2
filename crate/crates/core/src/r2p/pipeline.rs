use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{compensate_simple, filter_and_classify, SourcedRecord};
use super::text::truncate_sentences;
use super::{PassageRetriever, R2pConfig};
use crate::embedding_io::{read_jsonl, read_jsonl_lenient, write_jsonl, PassageRecord, QaRecord, RawQaLine, ResponseKind};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// A passage built around a response: `[D₁; R; D₂; …; D_k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructedPassage {
    pub id: String,
    pub text: String,
    pub source_response_id: String,
    /// Knowledge-base ids in retrieval order.
    pub retrieved_ids: Vec<String>,
    pub answers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversion {
    pub passage: ConstructedPassage,
    /// Fewer than `k` passages were retrieved.
    pub short_retrieval: bool,
}

/// Truncates the retrieved passages and places `response` after the first.
pub fn interleave(response: &str, retrieved: &[&str], truncate: usize) -> String {
    let mut parts: Vec<String> = retrieved.iter().map(|t| truncate_sentences(t, truncate)).collect();
    let at = parts.len().min(1);
    parts.insert(at, response.to_string());
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

/// Builds the passage for one (already compensated) record.
///
/// `answers` is the original response, before compensation.
pub fn convert(
    id: &str,
    record: &QaRecord,
    answer: &str,
    kb: &[PassageRecord],
    retriever: &dyn PassageRetriever,
    config: &R2pConfig,
) -> Result<Conversion> {
    if kb.is_empty() {
        return Err(Error::Pipeline("knowledge base is empty".into()));
    }
    let source = record.source_id();
    let hits = retriever.retrieve(&source, &record.response_text, config.k)?;
    let texts: Vec<&str> = hits.iter().map(|&(i, _)| kb[i].text.as_str()).collect();
    Ok(Conversion {
        passage: ConstructedPassage {
            id: id.to_string(),
            text: interleave(&record.response_text, &texts, config.truncate_sentences),
            source_response_id: source,
            retrieved_ids: hits.iter().map(|&(i, _)| kb[i].id.clone()).collect(),
            answers: vec![answer.to_string()],
        },
        short_retrieval: hits.len() < config.k,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// 1-based line in the QA file.
    pub line: usize,
    pub turn: usize,
    pub response_kind: ResponseKind,
    pub compensated: bool,
    pub source_response_id: String,
    pub retrieved_ids: Vec<String>,
    pub short_retrieval: bool,
}

/// One line of the constructed dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub query_id: String,
    pub image_id: String,
    pub query_text: String,
    pub passage_id: String,
    pub passage: String,
    pub answers: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct R2pStats {
    pub input: usize,
    pub output: usize,
    /// Every drop reason, including those with zero count.
    pub dropped: BTreeMap<String, usize>,
    pub compensated: usize,
    pub compensation_failed: usize,
    pub short_retrieval: usize,
}

impl R2pStats {
    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct R2pOutput {
    pub records: Vec<DatasetRecord>,
    pub stats: R2pStats,
}

fn convert_one(s: &SourcedRecord, kb: &[PassageRecord], retriever: &dyn PassageRetriever, config: &R2pConfig) -> Result<(DatasetRecord, bool, bool)> {
    let (rec, failed) = compensate_simple(&s.record);
    let compensated = rec.response_text != s.record.response_text;
    let id = format!("r2p{:07}", s.line);
    let conv = convert(&id, &rec, &s.record.response_text, kb, retriever, config)?;
    let p = conv.passage;
    Ok((
        DatasetRecord {
            query_id: format!("q{:07}", s.line),
            image_id: rec.image_id.clone(),
            query_text: rec.query_text.clone(),
            passage_id: p.id,
            passage: p.text,
            answers: p.answers,
            provenance: Provenance {
                line: s.line,
                turn: rec.turn_index,
                response_kind: rec.response_kind,
                compensated,
                source_response_id: p.source_response_id,
                retrieved_ids: p.retrieved_ids,
                short_retrieval: conv.short_retrieval,
            },
        },
        compensated,
        failed,
    ))
}

/// Filter, compensate and convert parsed QA lines. Output follows input
/// line order regardless of thread count.
pub fn run_pipeline(
    lines: Vec<(usize, std::result::Result<RawQaLine, String>)>,
    kb: &[PassageRecord],
    retriever: &dyn PassageRetriever,
    config: &R2pConfig,
) -> Result<R2pOutput> {
    config.validate()?;
    let filtered = filter_and_classify(lines, config);
    let mut stats = R2pStats {
        input: filtered.input,
        dropped: filtered.dropped.iter().map(|(r, &n)| (r.code().to_string(), n)).collect(),
        ..Default::default()
    };
    if filtered.records.is_empty() {
        return Ok(R2pOutput { records: Vec::new(), stats });
    }
    if kb.is_empty() {
        return Err(Error::Pipeline("knowledge base is empty".into()));
    }
    let converted = filtered
        .records
        .par_iter()
        .map(|s| convert_one(s, kb, retriever, config))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(converted.len());
    for (r, compensated, failed) in converted {
        stats.compensated += usize::from(compensated);
        stats.compensation_failed += usize::from(failed);
        stats.short_retrieval += usize::from(r.provenance.short_retrieval);
        records.push(r);
    }
    stats.output = records.len();
    debug_assert_eq!(stats.input - stats.total_dropped(), stats.output);
    Ok(R2pOutput { records, stats })
}

/// Runs the pipeline over files. `retriever` defaults to BM25 over the
/// knowledge base when `None`.
pub fn build_dataset(
    qa_file: &Path,
    kb_file: &Path,
    retriever: Option<&dyn PassageRetriever>,
    config: &R2pConfig,
) -> Result<R2pOutput> {
    let lines: Vec<(usize, std::result::Result<RawQaLine, String>)> = read_jsonl_lenient(qa_file)?;
    let kb: Vec<PassageRecord> = read_jsonl(kb_file)?;
    match retriever {
        Some(r) => run_pipeline(lines, &kb, r, config),
        None if kb.is_empty() => run_pipeline(lines, &kb, &NoRetriever, config),
        None => run_pipeline(lines, &kb, &super::Bm25::new(&kb)?, config),
    }
}

struct NoRetriever;

impl PassageRetriever for NoRetriever {
    fn retrieve(&self, _: &str, _: &str, _: usize) -> Result<Vec<(usize, f64)>> {
        Err(Error::Pipeline("knowledge base is empty".into()))
    }
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Prompts standing in for the missing question of image-passage pairs.
pub const DUMMY_PROMPTS: [&str; 5] = [
    "What is the main object?",
    "Identify the subject of this image.",
    "Who or what is the subject in this picture?",
    "Identify the main entity.",
    "What is the core object or subject shown here?",
];

/// Dataset records for image-passage pairs without a question, each
/// given a prompt drawn with `seed`.
pub fn image_passage_records(pairs: &[(String, PassageRecord)], seed: u64) -> Vec<DatasetRecord> {
    let mut rng = Rng::new(seed);
    pairs
        .iter()
        .enumerate()
        .map(|(i, (image_id, p))| DatasetRecord {
            query_id: format!("w{i:07}"),
            image_id: image_id.clone(),
            query_text: DUMMY_PROMPTS[rng.below(DUMMY_PROMPTS.len())].to_string(),
            passage_id: p.id.clone(),
            passage: p.text.clone(),
            answers: p.answers.clone().unwrap_or_default(),
            provenance: Provenance {
                line: 0,
                turn: 0,
                response_kind: ResponseKind::Detailed,
                compensated: false,
                source_response_id: String::new(),
                retrieved_ids: Vec::new(),
                short_retrieval: false,
            },
        })
        .collect()
}
