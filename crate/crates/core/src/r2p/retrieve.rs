use std::collections::HashMap;

use crate::embedding_io::{EmbeddingCollection, EmbeddingKind, PassageRecord};
use crate::error::{Error, Result};
use crate::late_interaction::search_exact;

use super::text::word_tokens;

/// Something that ranks knowledge-base passages for a response.
pub trait PassageRetriever: Sync {
    /// Up to `k` `(passage index, score)` pairs, best first. `query_id`
    /// identifies the response for retrievers that work on precomputed
    /// embeddings.
    fn retrieve(&self, query_id: &str, query_text: &str, k: usize) -> Result<Vec<(usize, f64)>>;
}

/// Okapi BM25 over lowercased word tokens.
#[derive(Clone, Debug)]
pub struct Bm25 {
    k1: f64,
    b: f64,
    ids: Vec<String>,
    /// term → postings `(passage, term frequency)`.
    postings: HashMap<String, Vec<(usize, u32)>>,
    lengths: Vec<f64>,
    avg_len: f64,
}

impl Bm25 {
    pub fn new(kb: &[PassageRecord]) -> Result<Self> {
        Self::with_params(kb, 1.2, 0.75)
    }

    pub fn with_params(kb: &[PassageRecord], k1: f64, b: f64) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::Pipeline("knowledge base is empty".into()));
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut lengths = Vec::with_capacity(kb.len());
        for (i, p) in kb.iter().enumerate() {
            let toks = word_tokens(&p.text);
            lengths.push(toks.len() as f64);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
        }
        let avg_len = (lengths.iter().sum::<f64>() / lengths.len() as f64).max(1.0);
        Ok(Self { k1, b, ids: kb.iter().map(|p| p.id.clone()).collect(), postings, lengths, avg_len })
    }

    pub fn scores(&self, query: &str) -> Vec<f64> {
        let n = self.lengths.len() as f64;
        let mut scores = vec![0.0; self.lengths.len()];
        let mut terms = word_tokens(query);
        terms.sort();
        terms.dedup();
        for t in &terms {
            let Some(list) = self.postings.get(t) else { continue };
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for &(i, tf) in list {
                let tf = f64::from(tf);
                let norm = self.k1 * (1.0 - self.b + self.b * self.lengths[i] / self.avg_len);
                scores[i] += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }
}

impl PassageRetriever for Bm25 {
    /// Passages sharing at least one term, ties broken by passage id.
    fn retrieve(&self, _query_id: &str, query_text: &str, k: usize) -> Result<Vec<(usize, f64)>> {
        let mut hits: Vec<(usize, f64)> =
            self.scores(query_text).into_iter().enumerate().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        hits.truncate(k);
        Ok(hits)
    }
}

/// Exact MaxSim over precomputed passage embeddings, with response
/// embeddings looked up by response id.
pub struct EmbeddingRetriever {
    passages: EmbeddingCollection,
    responses: EmbeddingCollection,
    kb_index: HashMap<String, usize>,
}

impl EmbeddingRetriever {
    pub fn new(kb: &[PassageRecord], passages: EmbeddingCollection, responses: EmbeddingCollection) -> Result<Self> {
        if kb.is_empty() || passages.is_empty() {
            return Err(Error::Pipeline("knowledge base is empty".into()));
        }
        if passages.kind() != EmbeddingKind::Passage || responses.kind() != EmbeddingKind::TextQuery {
            return Err(Error::param("expected passage and text_query embedding collections"));
        }
        let kb_index: HashMap<String, usize> = kb.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        if let Some(p) = passages.iter().find(|p| !kb_index.contains_key(&p.id)) {
            return Err(Error::param(format!("embedded passage {} is not in the knowledge base", p.id)));
        }
        Ok(Self { passages, responses, kb_index })
    }
}

impl PassageRetriever for EmbeddingRetriever {
    fn retrieve(&self, query_id: &str, _query_text: &str, k: usize) -> Result<Vec<(usize, f64)>> {
        let q = self
            .responses
            .get(query_id)
            .ok_or_else(|| Error::param(format!("no response embedding for {query_id}")))?;
        let ranked = search_exact(q, &self.passages, k)?;
        Ok(ranked.entries.iter().map(|e| (self.kb_index[&e.passage_id], f64::from(e.score))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::TokenMatrix;

    fn kb(texts: &[&str]) -> Vec<PassageRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| PassageRecord { id: format!("k{i}"), text: t.to_string(), answers: None })
            .collect()
    }

    /// Textbook BM25 for one term, computed by hand.
    #[test]
    fn single_term_score_matches_formula() {
        let kb = kb(&["cat cat dog", "dog bird", "fish"]);
        let bm = Bm25::new(&kb).unwrap();
        let s = bm.scores("cat");
        let (n, df, tf, len, avg) = (3.0f64, 1.0, 2.0, 3.0, 2.0);
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let want = idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
        assert!((s[0] - want).abs() < 1e-12);
        assert_eq!(&s[1..], &[0.0, 0.0]);
    }

    #[test]
    fn verbatim_passage_ranks_first() {
        let kb = kb(&[
            "The harbour is busy in summer.",
            "A golden retriever is a friendly dog breed.",
            "Bridges span rivers.",
            "Retriever dogs fetch.",
            "Summer rain.",
        ]);
        let hits = Bm25::new(&kb).unwrap().retrieve("r", "a golden retriever", 3).unwrap();
        assert_eq!(hits[0].0, 1);
        assert!(hits.len() <= 3);
    }

    #[test]
    fn ties_by_id_and_no_overlap() {
        let kb = kb(&["same words", "same words"]);
        let bm = Bm25::new(&kb).unwrap();
        let hits = bm.retrieve("r", "same", 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!(bm.retrieve("r", "absent", 2).unwrap().is_empty());
        assert!(matches!(Bm25::new(&[]), Err(Error::Pipeline(_))));
    }

    #[test]
    fn embedding_retriever_uses_maxsim() {
        let kb = kb(&["x", "y"]);
        let mut passages = EmbeddingCollection::new(EmbeddingKind::Passage, 2);
        passages.push(TokenMatrix::from_rows("k0", EmbeddingKind::Passage, &[vec![1.0, 0.0]]).unwrap()).unwrap();
        passages.push(TokenMatrix::from_rows("k1", EmbeddingKind::Passage, &[vec![0.0, 1.0]]).unwrap()).unwrap();
        let mut responses = EmbeddingCollection::new(EmbeddingKind::TextQuery, 2);
        responses.push(TokenMatrix::from_rows("r", EmbeddingKind::TextQuery, &[vec![0.1, 1.0]]).unwrap()).unwrap();
        let r = EmbeddingRetriever::new(&kb, passages, responses).unwrap();
        let hits = r.retrieve("r", "", 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![1, 0]);
        assert!(r.retrieve("missing", "", 1).is_err());
    }
}
