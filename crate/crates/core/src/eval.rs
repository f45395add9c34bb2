//! Retrieval metrics: MRR@5, Recall@k and Pseudo-Recall@k.
//!
//! A record is relevant-by-id (Recall) or relevant-by-answer (Pseudo-Recall:
//! a retrieved passage counts when its text contains a gold answer).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_io::{read_jsonl, GoldPair, PassageRecord};
use crate::error::{Error, Result};
use crate::late_interaction::{read_tsv, RankedList};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Passages(Vec<String>),
    Answers(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GoldMode {
    Passage,
    Answer,
}

impl Gold {
    pub fn mode(&self) -> GoldMode {
        match self {
            Gold::Passages(_) => GoldMode::Passage,
            Gold::Answers(_) => GoldMode::Answer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub query_id: String,
    pub ranked: RankedList,
    pub gold: Gold,
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// [`normalize_text`] plus stripping of leading and trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    normalize_text(s).trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_string()
}

/// Whether `passage` contains `answer` after normalisation. Plain
/// substring matching accepts "cat" inside "concatenate"; `word_boundary`
/// requires non-alphanumeric characters (or the ends) around the match.
pub fn contains_answer(passage: &str, answer: &str, word_boundary: bool) -> bool {
    let a = normalize_answer(answer);
    if a.is_empty() {
        return false;
    }
    let p = normalize_text(passage);
    if !word_boundary {
        return p.contains(&a);
    }
    p.match_indices(&a).any(|(i, m)| {
        let before = p[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = p[i + m.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before && after
    })
}

/// Passage texts by id, needed for answer-mode relevance.
pub type PassageTexts = HashMap<String, String>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub word_boundary: bool,
}

/// 1-based rank of the first relevant passage among the top `depth`.
pub fn first_relevant(
    record: &EvalRecord,
    depth: usize,
    texts: Option<&PassageTexts>,
    opts: MatchOptions,
) -> Result<Option<usize>> {
    match &record.gold {
        Gold::Passages(ids) => {
            let gold: HashSet<&str> = ids.iter().map(String::as_str).collect();
            Ok(record.ranked.ids().take(depth).position(|id| gold.contains(id)).map(|p| p + 1))
        }
        Gold::Answers(answers) => {
            let texts = texts.ok_or_else(|| Error::Eval("answer-mode relevance needs passage texts".into()))?;
            for (r, id) in record.ranked.ids().take(depth).enumerate() {
                let text = texts
                    .get(id)
                    .ok_or_else(|| Error::Eval(format!("no text for retrieved passage {id}")))?;
                if answers.iter().any(|a| contains_answer(text, a, opts.word_boundary)) {
                    return Ok(Some(r + 1));
                }
            }
            Ok(None)
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn per_record<F>(records: &[EvalRecord], f: F) -> Result<f64>
where
    F: Fn(&EvalRecord) -> Result<f64> + Sync + Send,
{
    let v = records.par_iter().map(f).collect::<Result<Vec<f64>>>()?;
    Ok(mean(&v))
}

/// Mean reciprocal rank of the first relevant result within the top 5,
/// with each record's own gold mode.
pub fn mrr_at_5(records: &[EvalRecord], texts: Option<&PassageTexts>, opts: MatchOptions) -> Result<f64> {
    per_record(records, |r| Ok(first_relevant(r, 5, texts, opts)?.map_or(0.0, |rank| 1.0 / rank as f64)))
}

/// Fraction of records with a gold passage id in the top `k`.
pub fn recall_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    per_record(records, |r| {
        if r.gold.mode() != GoldMode::Passage {
            return Err(Error::Eval(format!("query {}: recall needs gold passage ids", r.query_id)));
        }
        Ok(first_relevant(r, k, None, MatchOptions::default())?.map_or(0.0, |_| 1.0))
    })
}

/// Fraction of records whose top `k` passages contain a gold answer.
pub fn pseudo_recall_at_k(records: &[EvalRecord], k: usize, texts: &PassageTexts, opts: MatchOptions) -> Result<f64> {
    per_record(records, |r| {
        if r.gold.mode() != GoldMode::Answer {
            return Err(Error::Eval(format!("query {}: pseudo-recall needs gold answers", r.query_id)));
        }
        Ok(first_relevant(r, k, Some(texts), opts)?.map_or(0.0, |_| 1.0))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: GoldMode,
    pub ks: Vec<usize>,
    #[serde(default)]
    pub word_boundary: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: GoldMode::Passage, ks: vec![1, 5, 10, 20, 50], word_boundary: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub n_queries: usize,
    pub config: EvalConfig,
}

impl EvalReport {
    /// Two-column table, one metric per line.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>8}\n", "metric", "value");
        for (k, v) in &self.metrics {
            s.push_str(&format!("{k:<12} {v:>8.4}\n"));
        }
        s.push_str(&format!("{:<12} {:>8}\n", "queries", self.n_queries));
        s
    }
}

pub fn evaluate(records: &[EvalRecord], texts: Option<&PassageTexts>, config: &EvalConfig) -> Result<EvalReport> {
    let opts = MatchOptions { word_boundary: config.word_boundary };
    if let Some(r) = records.iter().find(|r| r.gold.mode() != config.mode) {
        return Err(Error::Eval(format!("query {} has gold of the wrong mode", r.query_id)));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("MRR@5".to_string(), mrr_at_5(records, texts, opts)?);
    for &k in &config.ks {
        let v = match config.mode {
            GoldMode::Passage => ("R", recall_at_k(records, k)?),
            GoldMode::Answer => {
                let texts = texts.ok_or_else(|| Error::Eval("pseudo-recall needs passage texts".into()))?;
                ("PR", pseudo_recall_at_k(records, k, texts, opts)?)
            }
        };
        metrics.insert(format!("{}@{k}", v.0), v.1);
    }
    Ok(EvalReport { metrics, n_queries: records.len(), config: config.clone() })
}

/// JSONL line of an answer gold file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswers {
    pub query_id: String,
    pub answers: Vec<String>,
}

/// Joins ranked lists with gold read from `gold_file`: `GoldPair` lines in
/// passage mode, `GoldAnswers` lines in answer mode. Queries without gold
/// are an error; queries without a ranked list count as empty lists.
pub fn load_records(ranked_tsv: &Path, gold_file: &Path, mode: GoldMode) -> Result<Vec<EvalRecord>> {
    let lists = read_tsv(ranked_tsv)?;
    let mut gold: BTreeMap<String, Gold> = BTreeMap::new();
    match mode {
        GoldMode::Passage => {
            for g in read_jsonl::<GoldPair>(gold_file)? {
                match gold.entry(g.query_id).or_insert_with(|| Gold::Passages(Vec::new())) {
                    Gold::Passages(v) => v.push(g.passage_id),
                    Gold::Answers(_) => unreachable!(),
                }
            }
        }
        GoldMode::Answer => {
            for g in read_jsonl::<GoldAnswers>(gold_file)? {
                match gold.entry(g.query_id).or_insert_with(|| Gold::Answers(Vec::new())) {
                    Gold::Answers(v) => v.extend(g.answers),
                    Gold::Passages(_) => unreachable!(),
                }
            }
        }
    }
    let mut by_query: HashMap<String, RankedList> = lists.into_iter().map(|l| (l.query_id.clone(), l)).collect();
    if let Some(q) = by_query.keys().find(|q| !gold.contains_key(*q)) {
        return Err(Error::Eval(format!("ranked query {q} has no gold")));
    }
    Ok(gold
        .into_iter()
        .map(|(q, g)| {
            let ranked = by_query.remove(&q).unwrap_or_else(|| RankedList {
                query_id: q.clone(),
                entries: Vec::new(),
                k: 0,
                short: true,
                no_candidates: true,
            });
            EvalRecord { query_id: q, ranked, gold: g }
        })
        .collect())
}

/// Passage texts from a knowledge-base JSONL file.
pub fn load_passage_texts(path: &Path) -> Result<PassageTexts> {
    Ok(read_jsonl::<PassageRecord>(path)?.into_iter().map(|p| (p.id, p.text)).collect())
}
