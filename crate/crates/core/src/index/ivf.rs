use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_centroids, Centroids, ResidualQuantizer};
use crate::embedding_io::{EmbeddingCollection, EmbeddingKind, TokenMatrix};
use crate::error::{Error, Result};
use crate::late_interaction::{maxsim_raw, rank_scores, RankedList};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Defaults to `ceil(4 · sqrt(total tokens))`, capped at the token count.
    pub k_centroids: Option<usize>,
    pub kmeans_iters: usize,
    /// Tokens sampled for centroid training and bucket fitting.
    pub sample_size: usize,
    pub bits: u8,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { k_centroids: None, kmeans_iters: 20, sample_size: 100_000, bits: 2, seed: 0 }
    }
}

impl IndexConfig {
    pub fn centroids_for(&self, total_tokens: usize) -> usize {
        self.k_centroids
            .unwrap_or_else(|| (4.0 * (total_tokens as f64).sqrt()).ceil() as usize)
            .min(total_tokens)
    }
}

pub const DEFAULT_NPROBE: usize = 8;

/// Per-token centroid ids and packed residual codes, in corpus order.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualCodes {
    pub quantizer: ResidualQuantizer,
    pub centroid_ids: Vec<u32>,
    /// `code_len` bytes per token.
    pub codes: Vec<u8>,
}

impl ResidualCodes {
    pub fn code_len(&self) -> usize {
        self.quantizer.code_len()
    }

    pub fn len(&self) -> usize {
        self.centroid_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroid_ids.is_empty()
    }

    pub fn code(&self, token: usize) -> &[u8] {
        let l = self.code_len();
        &self.codes[token * l..(token + 1) * l]
    }
}

/// Centroid → postings, plus per-passage token ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    pub passage_ids: Vec<String>,
    pub token_counts: Vec<u32>,
    /// Per centroid, `(passage, token offset within passage)` in corpus order.
    pub postings: Vec<Vec<(u32, u32)>>,
    /// Prefix sums of `token_counts`, length `passages + 1`.
    starts: Vec<usize>,
}

impl InvertedIndex {
    pub fn new(passage_ids: Vec<String>, token_counts: Vec<u32>, postings: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if passage_ids.len() != token_counts.len() {
            return Err(Error::shape("passage ids and token counts differ in length"));
        }
        let mut starts = Vec::with_capacity(token_counts.len() + 1);
        starts.push(0);
        for &c in &token_counts {
            starts.push(starts.last().unwrap() + c as usize);
        }
        let total: usize = postings.iter().map(Vec::len).sum();
        if total != *starts.last().unwrap() {
            return Err(Error::format(0, format!("{total} postings for {} tokens", starts.last().unwrap())));
        }
        for &(p, off) in postings.iter().flatten() {
            if p as usize >= token_counts.len() || off >= token_counts[p as usize] {
                return Err(Error::format(0, format!("posting ({p}, {off}) out of range")));
            }
        }
        Ok(Self { passage_ids, token_counts, postings, starts })
    }

    pub fn num_passages(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn total_tokens(&self) -> usize {
        *self.starts.last().unwrap()
    }

    /// Global token range of passage `p`.
    pub fn token_range(&self, p: usize) -> std::ops::Range<usize> {
        self.starts[p]..self.starts[p + 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub mse: f64,
    pub max_abs_error: f32,
    pub max_error_bound: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedIndex {
    pub config: IndexConfig,
    pub centroids: Centroids,
    pub codes: ResidualCodes,
    pub inverted: InvertedIndex,
    pub report: EncodeReport,
}

/// Tokens of every passage, unit-normalised, flattened in corpus order.
fn corpus_tokens(corpus: &EmbeddingCollection) -> Vec<f32> {
    corpus.iter().flat_map(|p| p.clone().normalized().values().to_vec()).collect()
}

/// Up to `size` token indices drawn without replacement, in ascending order.
fn sample_tokens(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if n <= size {
        return (0..n).collect();
    }
    let mut idx = Rng::new(seed).fork(7).sample_indices(n, size);
    idx.sort_unstable();
    idx
}

/// Assigns each token to its nearest centroid, fits the residual buckets on
/// a sample and packs the codes.
pub fn encode_corpus(
    corpus: &EmbeddingCollection,
    centroids: &Centroids,
    bits: u8,
    sample_size: usize,
    seed: u64,
) -> Result<(ResidualCodes, InvertedIndex, EncodeReport)> {
    let dim = corpus.dim();
    if centroids.dim() != dim {
        return Err(Error::shape(format!("centroids of dim {} for a corpus of dim {dim}", centroids.dim())));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus is empty".into()));
    }
    let tokens = corpus_tokens(corpus);
    let n = tokens.len() / dim;
    let assign: Vec<u32> = (0..n)
        .into_par_iter()
        .map(|i| centroids.nearest(&tokens[i * dim..(i + 1) * dim]).0 as u32)
        .collect();
    let residual = |i: usize| -> Vec<f32> {
        let c = centroids.row(assign[i] as usize);
        tokens[i * dim..(i + 1) * dim].iter().zip(c).map(|(t, c)| t - c).collect()
    };

    let sample: Vec<f32> = sample_tokens(n, sample_size, seed).into_iter().flat_map(residual).collect();
    let quantizer = ResidualQuantizer::fit(&sample, dim, bits)?;
    let code_len = quantizer.code_len();
    let per_token: Vec<(Vec<u8>, f64, f32)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = residual(i);
            let code = quantizer.encode(&r).expect("residual has corpus dim");
            let back = quantizer.decode(&code);
            let (mut se, mut max) = (0.0f64, 0.0f32);
            for (a, b) in r.iter().zip(&back) {
                se += f64::from(a - b).powi(2);
                max = max.max((a - b).abs());
            }
            (code, se, max)
        })
        .collect();
    let mut codes = Vec::with_capacity(n * code_len);
    let (mut se, mut max_abs) = (0.0, 0.0f32);
    for (c, e, m) in per_token {
        codes.extend_from_slice(&c);
        se += e;
        max_abs = max_abs.max(m);
    }
    let report = EncodeReport {
        mse: se / (n * dim) as f64,
        max_abs_error: max_abs,
        max_error_bound: quantizer.error_bounds().into_iter().fold(0.0, f32::max),
    };

    let mut postings = vec![Vec::new(); centroids.k()];
    let mut token = 0;
    for (p, rec) in corpus.iter().enumerate() {
        for off in 0..rec.tokens() {
            postings[assign[token] as usize].push((p as u32, off as u32));
            token += 1;
        }
    }
    let inverted = InvertedIndex::new(
        corpus.iter().map(|p| p.id.clone()).collect(),
        corpus.iter().map(|p| p.tokens() as u32).collect(),
        postings,
    )?;
    Ok((ResidualCodes { quantizer, centroid_ids: assign, codes }, inverted, report))
}

impl CompressedIndex {
    pub fn build(corpus: &EmbeddingCollection, config: IndexConfig) -> Result<Self> {
        if corpus.kind() != EmbeddingKind::Passage {
            return Err(Error::param(format!("index expects passage embeddings, got {}", corpus.kind())));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyInput("corpus is empty".into()));
        }
        let dim = corpus.dim();
        let tokens = corpus_tokens(corpus);
        let n = tokens.len() / dim;
        let k = config.centroids_for(n);
        let sample: Vec<f32> = sample_tokens(n, config.sample_size, config.seed)
            .into_iter()
            .flat_map(|i| tokens[i * dim..(i + 1) * dim].to_vec())
            .collect();
        let mut k = k.min(sample.len() / dim);
        if config.k_centroids.is_none() {
            // Repetitive corpora can have fewer distinct tokens than the
            // default count; an explicit count is left to fail loudly.
            // Adding zero folds -0.0 into 0.0, matching seed selection.
            let distinct: HashSet<Vec<u32>> =
                sample.chunks_exact(dim).map(|t| t.iter().map(|x| (x + 0.0).to_bits()).collect()).collect();
            k = k.min(distinct.len());
        }
        let centroids = train_centroids(&sample, dim, k, config.kmeans_iters, config.seed)?;
        let (codes, inverted, report) = encode_corpus(corpus, &centroids, config.bits, config.sample_size, config.seed)?;
        log::info!(
            "indexed {} passages / {n} tokens into {} centroids, residual mse {:.3e}",
            inverted.num_passages(),
            centroids.k(),
            report.mse
        );
        Ok(Self { config, centroids, codes, inverted, report })
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn num_passages(&self) -> usize {
        self.inverted.num_passages()
    }

    /// Reconstructed tokens of passage `p` (centroid plus bucket values).
    pub fn decode_passage(&self, p: usize) -> Vec<f32> {
        let dim = self.dim();
        let range = self.inverted.token_range(p);
        let mut out = vec![0.0f32; range.len() * dim];
        for (i, t) in range.enumerate() {
            let o = &mut out[i * dim..(i + 1) * dim];
            self.codes.quantizer.decode_into(self.codes.code(t), o);
            for (x, &c) in o.iter_mut().zip(self.centroids.row(self.codes.centroid_ids[t] as usize)) {
                *x += c;
            }
        }
        out
    }

    /// The whole corpus as the index reconstructs it.
    pub fn decoded_corpus(&self) -> Result<EmbeddingCollection> {
        let records = (0..self.num_passages())
            .map(|p| TokenMatrix::new(self.inverted.passage_ids[p].clone(), EmbeddingKind::Passage, self.dim(), self.decode_passage(p)))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingCollection::from_records(EmbeddingKind::Passage, self.dim(), records)
    }

    /// Passages owning a token in any of the `nprobe` nearest posting lists
    /// of any query token.
    pub fn candidates(&self, query: &TokenMatrix, nprobe: usize) -> BTreeSet<usize> {
        let mut probed = BTreeSet::new();
        for q in query.rows() {
            probed.extend(self.centroids.top(q, nprobe));
        }
        probed
            .into_iter()
            .flat_map(|c| self.inverted.postings[c].iter().map(|&(p, _)| p as usize))
            .collect()
    }

    /// Two-stage search: centroid probing for candidates, then exact MaxSim
    /// on their decoded tokens.
    pub fn search(&self, query: &TokenMatrix, k: usize, nprobe: usize) -> Result<RankedList> {
        if k == 0 || nprobe == 0 {
            return Err(Error::param("k and nprobe must be at least 1"));
        }
        if query.dim() != self.dim() {
            return Err(Error::shape(format!("query dim {} for index dim {}", query.dim(), self.dim())));
        }
        if query.is_empty() {
            return Err(Error::EmptyInput(format!("query {} has no tokens", query.id)));
        }
        let cands: Vec<usize> = self.candidates(query, nprobe).into_iter().collect();
        if cands.is_empty() {
            return Ok(RankedList {
                query_id: query.id.clone(),
                entries: Vec::new(),
                k,
                short: true,
                no_candidates: true,
            });
        }
        let scored: Vec<(usize, f32)> = cands
            .par_iter()
            .map(|&p| (p, maxsim_raw(query.values(), &self.decode_passage(p), self.dim())))
            .collect();
        Ok(rank_scores(&query.id, scored, |p| self.inverted.passage_ids[p].clone(), k))
    }
}

/// Free-function form of [`CompressedIndex::search`].
pub fn search_compressed(query: &TokenMatrix, index: &CompressedIndex, k: usize, nprobe: usize) -> Result<RankedList> {
    index.search(query, k, nprobe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::{synth_clustered_corpus, ClusteredCorpusConfig};
    use crate::late_interaction::search_exact;

    fn corpus(n: usize, seed: u64) -> (EmbeddingCollection, EmbeddingCollection) {
        let c = synth_clustered_corpus(&ClusteredCorpusConfig::new(n, 16, 20, seed)).unwrap();
        (c.passages, c.queries)
    }

    #[test]
    fn every_token_in_one_posting() {
        let (p, _) = corpus(60, 1);
        let idx = CompressedIndex::build(&p, IndexConfig { k_centroids: Some(32), ..Default::default() }).unwrap();
        let mut seen = vec![0u32; p.total_tokens()];
        for (p_id, off) in idx.inverted.postings.iter().flatten() {
            seen[idx.inverted.token_range(*p_id as usize).start + *off as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(idx.codes.codes.len(), p.total_tokens() * 4);
    }

    #[test]
    fn default_centroid_count() {
        let c = IndexConfig::default();
        assert_eq!(c.centroids_for(10_000), 400);
        assert_eq!(c.centroids_for(3), 3);
        assert_eq!(c.centroids_for(1000), 127);
    }

    #[test]
    fn decode_error_bounded() {
        let (p, _) = corpus(50, 2);
        let idx = CompressedIndex::build(&p, IndexConfig { k_centroids: Some(16), ..Default::default() }).unwrap();
        let hw = idx.codes.quantizer.error_bounds();
        let mut t = 0;
        for (pi, rec) in p.iter().enumerate() {
            let rec = rec.clone().normalized();
            let back = idx.decode_passage(pi);
            for (a, b) in rec.values().chunks(16).zip(back.chunks(16)) {
                for d in 0..16 {
                    assert!((a[d] - b[d]).abs() <= hw[d] * (1.0 + 1e-5) + 1e-6);
                }
                t += 1;
            }
        }
        assert_eq!(t, p.total_tokens());
        assert!(idx.report.max_abs_error <= idx.report.max_error_bound * (1.0 + 1e-5));
    }

    #[test]
    fn exhaustive_probe_equals_exact_on_decoded() {
        let (p, q) = corpus(80, 3);
        let idx = CompressedIndex::build(&p, IndexConfig { k_centroids: Some(24), ..Default::default() }).unwrap();
        let decoded = idx.decoded_corpus().unwrap();
        for query in q.iter() {
            let a = idx.search(query, 10, 24).unwrap();
            let b = search_exact(query, &decoded, 10).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_passage_corpus() {
        let (p, q) = corpus(1, 4);
        let idx = CompressedIndex::build(&p, IndexConfig::default()).unwrap();
        for nprobe in [1, 3, 100] {
            let r = idx.search(q.records().first().unwrap(), 5, nprobe).unwrap();
            assert_eq!(r.entries.len(), 1);
            assert!(r.short);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let (p, _) = corpus(40, 5);
        let cfg = IndexConfig { k_centroids: Some(20), seed: 3, ..Default::default() };
        assert_eq!(CompressedIndex::build(&p, cfg).unwrap(), CompressedIndex::build(&p, cfg).unwrap());
    }

    #[test]
    fn errors() {
        let (p, q) = corpus(10, 6);
        let idx = CompressedIndex::build(&p, IndexConfig::default()).unwrap();
        let query = q.records().first().unwrap();
        assert!(idx.search(query, 0, 1).is_err());
        assert!(idx.search(query, 1, 0).is_err());
        let wrong = TokenMatrix::new("x", EmbeddingKind::TextQuery, 8, vec![0.5; 8]).unwrap();
        assert!(matches!(idx.search(&wrong, 1, 1), Err(Error::Shape(_))));
        let other = Centroids::new(8, vec![1.0; 8]).unwrap();
        assert!(matches!(encode_corpus(&p, &other, 2, 100, 0), Err(Error::Shape(_))));
        assert!(CompressedIndex::build(&q, IndexConfig::default()).is_err());
    }

    #[test]
    fn default_centroids_capped_by_distinct_tokens() {
        let mut p = EmbeddingCollection::new(EmbeddingKind::Passage, 4);
        let tokens = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0]];
        for i in 0..20 {
            let rows: Vec<Vec<f32>> = (0..6).map(|j| tokens[(i + j) % 3].to_vec()).collect();
            p.push(TokenMatrix::from_rows(format!("p{i:02}"), EmbeddingKind::Passage, &rows).unwrap()).unwrap();
        }
        let idx = CompressedIndex::build(&p, IndexConfig::default()).unwrap();
        assert_eq!(idx.centroids.k(), 3);
        assert!(CompressedIndex::build(&p, IndexConfig { k_centroids: Some(5), ..Default::default() }).is_err());
    }
}
