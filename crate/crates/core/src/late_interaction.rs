//! MaxSim scoring and exact top-k search.
//!
//! `score(Q, D) = Σ_i max_j ⟨Q_i, D_j⟩`. Scoring assumes both sides have
//! already been L2-normalised per token: passages at ingestion
//! ([`EmbeddingCollection::normalize`]) and queries when they are assembled.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_io::{EmbeddingCollection, TokenMatrix};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub query_id: String,
    pub passage_id: String,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f32,
}

/// Passages in non-increasing score order, ties by ascending id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    /// Requested depth.
    pub k: usize,
    /// Set when fewer than `k` passages were available.
    pub short: bool,
    /// Set when candidate generation produced nothing.
    pub no_candidates: bool,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    /// 1-based rank of `passage_id`, if present.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.ids().position(|id| id == passage_id).map(|p| p + 1)
    }
}

#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// MaxSim over raw row-major token buffers of a shared dimension.
///
/// Both buffers must be non-empty multiples of `dim`.
pub fn maxsim_raw(query: &[f32], passage: &[f32], dim: usize) -> f32 {
    query
        .chunks_exact(dim)
        .map(|q| {
            passage
                .chunks_exact(dim)
                .map(|d| dot_f32(q, d))
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .sum()
}

fn check_pair(query: &TokenMatrix, passage: &TokenMatrix) -> Result<()> {
    if query.dim() != passage.dim() {
        return Err(Error::shape(format!(
            "query {} has dim {}, passage {} has dim {}",
            query.id,
            query.dim(),
            passage.id,
            passage.dim()
        )));
    }
    if query.is_empty() {
        return Err(Error::EmptyInput(format!("query {} has no tokens", query.id)));
    }
    if passage.is_empty() {
        return Err(Error::EmptyInput(format!("passage {} has no tokens", passage.id)));
    }
    Ok(())
}

pub fn maxsim(query: &TokenMatrix, passage: &TokenMatrix) -> Result<RelevanceScore> {
    check_pair(query, passage)?;
    Ok(RelevanceScore {
        query_id: query.id.clone(),
        passage_id: passage.id.clone(),
        score: maxsim_raw(query.values(), passage.values(), query.dim()),
    })
}

/// MaxSim in `f64` that also reports, for every query token, the index of
/// the passage token attaining the maximum (first index on ties). This is
/// the sub-gradient route used in training.
pub fn maxsim_with_argmax(query: &Matrix, passage: &Matrix) -> Result<(f64, Vec<usize>)> {
    if query.cols() != passage.cols() {
        return Err(Error::shape(format!(
            "maxsim: dims {} and {}",
            query.cols(),
            passage.cols()
        )));
    }
    if query.rows() == 0 || passage.rows() == 0 {
        return Err(Error::EmptyInput("maxsim on an empty matrix".into()));
    }
    let mut total = 0.0;
    let mut argmax = Vec::with_capacity(query.rows());
    for q in query.row_iter() {
        let (mut best, mut at) = (f64::NEG_INFINITY, 0);
        for (j, d) in passage.row_iter().enumerate() {
            let s = dot(q, d);
            if s > best {
                best = s;
                at = j;
            }
        }
        total += best;
        argmax.push(at);
    }
    Ok((total, argmax))
}

/// Sorts `(passage index, score)` by score descending then id ascending and
/// keeps the first `k`.
pub(crate) fn rank_scores(
    query_id: &str,
    mut scored: Vec<(usize, f32)>,
    id_of: impl Fn(usize) -> String,
    k: usize,
) -> RankedList {
    let ids: HashMap<usize, String> = scored.iter().map(|&(i, _)| (i, id_of(i))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[&a.0].cmp(&ids[&b.0])));
    let short = scored.len() < k;
    scored.truncate(k);
    RankedList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(i, score)| RankedEntry {
                passage_id: ids[&i].clone(),
                score,
            })
            .collect(),
        k,
        short,
        no_candidates: false,
    }
}

/// Exhaustive MaxSim over the whole corpus, returning the top `k`.
///
/// Asking for more passages than the corpus holds returns the full ranking
/// with [`RankedList::short`] set.
pub fn search_exact(query: &TokenMatrix, corpus: &EmbeddingCollection, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus is empty".into()));
    }
    let scored = corpus
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, p)| maxsim(query, p).map(|s| (i, s.score)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_scores(&query.id, scored, |i| corpus.records()[i].id.clone(), k))
}

/// Scores every (query, passage) pair. Entry `(i, j)` is
/// `maxsim(queries[i], passages[j])`.
pub fn score_matrix(queries: &[TokenMatrix], passages: &[TokenMatrix]) -> Result<Matrix> {
    let rows = queries
        .par_iter()
        .map(|q| {
            passages
                .iter()
                .map(|p| maxsim(q, p).map(|s| f64::from(s.score)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::new(queries.len(), passages.len(), rows.concat())
}

/// Writes ranked lists as `query_id \t rank \t passage_id \t score`.
pub fn write_tsv(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for list in lists {
        for (r, e) in list.entries.iter().enumerate() {
            writeln!(buf, "{}\t{}\t{}\t{:.6}", list.query_id, r + 1, e.passage_id, e.score)
                .expect("writing to a Vec cannot fail");
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a ranking TSV back into lists, grouping consecutive rows by query
/// in first-seen order and sorting each group by rank.
pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, RankedEntry)>> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        let rank: usize = cols[1].parse().map_err(|_| bad("rank is not an integer"))?;
        let score: f32 = cols[3].parse().map_err(|_| bad("score is not a number"))?;
        let qid = cols[0].to_string();
        if !groups.contains_key(&qid) {
            order.push(qid.clone());
        }
        groups.entry(qid).or_default().push((
            rank,
            RankedEntry {
                passage_id: cols[2].to_string(),
                score,
            },
        ));
    }
    Ok(order
        .into_iter()
        .map(|qid| {
            let mut rows = groups.remove(&qid).unwrap_or_default();
            rows.sort_by_key(|r| r.0);
            let k = rows.len();
            RankedList {
                query_id: qid,
                entries: rows.into_iter().map(|r| r.1).collect(),
                k,
                short: false,
                no_candidates: false,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::EmbeddingKind;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn tm(id: &str, rows: &[Vec<f32>]) -> TokenMatrix {
        TokenMatrix::from_rows(id, EmbeddingKind::Passage, rows).unwrap()
    }

    fn random_tm(id: &str, tokens: usize, dim: usize, rng: &mut Rng) -> TokenMatrix {
        let v = (0..tokens * dim).map(|_| rng.normal() as f32).collect();
        TokenMatrix::new(id, EmbeddingKind::Passage, dim, v).unwrap().normalized()
    }

    /// Double-loop oracle in f64.
    fn oracle(q: &TokenMatrix, d: &TokenMatrix) -> f64 {
        let mut total = 0.0;
        for i in 0..q.tokens() {
            let mut best = f64::NEG_INFINITY;
            for j in 0..d.tokens() {
                let mut s = 0.0;
                for k in 0..q.dim() {
                    s += f64::from(q.row(i)[k]) * f64::from(d.row(j)[k]);
                }
                best = best.max(s);
            }
            total += best;
        }
        total
    }

    #[test]
    fn orthonormal_examples() {
        let q = tm("q", &[vec![1.0, 0.0]]);
        let d = tm("d", &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(maxsim(&q, &d).unwrap().score, 1.0);
        let q2 = tm("q", &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d2 = tm("d", &[vec![1.0, 0.0]]);
        assert_eq!(maxsim(&q2, &d2).unwrap().score, 1.0);
    }

    #[test]
    fn errors() {
        let q = tm("q", &[vec![1.0, 0.0]]);
        let d = tm("d", &[vec![1.0, 0.0, 0.0]]);
        assert!(matches!(maxsim(&q, &d), Err(Error::Shape(_))));
        let empty = TokenMatrix::new("e", EmbeddingKind::Passage, 2, vec![]).unwrap();
        assert!(matches!(maxsim(&q, &empty), Err(Error::EmptyInput(_))));
        assert!(matches!(maxsim(&empty, &q), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fast_path_matches_oracle() {
        let mut rng = Rng::new(21);
        for n in 0..100 {
            let q = random_tm("q", 1 + rng.below(8), 16, &mut rng);
            let d = random_tm(&format!("d{n}"), 1 + rng.below(32), 16, &mut rng);
            let fast = f64::from(maxsim(&q, &d).unwrap().score);
            let slow = oracle(&q, &d);
            assert!((fast - slow).abs() <= 1e-5 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn f64_route_agrees() {
        let mut rng = Rng::new(4);
        let q = random_tm("q", 5, 12, &mut rng);
        let d = random_tm("d", 9, 12, &mut rng);
        let (s, argmax) = maxsim_with_argmax(&q.to_matrix(), &d.to_matrix()).unwrap();
        assert!((s - oracle(&q, &d)).abs() < 1e-12);
        assert_eq!(argmax.len(), 5);
    }

    #[test]
    fn single_passage_corpus() {
        let mut rng = Rng::new(1);
        let corpus = EmbeddingCollection::from_records(
            EmbeddingKind::Passage,
            8,
            vec![random_tm("only", 3, 8, &mut rng)],
        )
        .unwrap();
        let q = random_tm("q", 2, 8, &mut rng);
        for k in [1, 5] {
            let r = search_exact(&q, &corpus, k).unwrap();
            assert_eq!(r.entries[0].passage_id, "only");
            assert_eq!(r.short, k > 1);
        }
    }

    #[test]
    fn self_match_ranks_first() {
        let mut rng = Rng::new(2);
        let recs: Vec<_> = (0..50).map(|i| random_tm(&format!("p{i:02}"), 6, 16, &mut rng)).collect();
        let corpus = EmbeddingCollection::from_records(EmbeddingKind::Passage, 16, recs).unwrap();
        let q = corpus.get("p17").unwrap().clone();
        let r = search_exact(&q, &corpus, 3).unwrap();
        assert_eq!(r.entries[0].passage_id, "p17");
        assert!((r.entries[0].score - q.tokens() as f32).abs() < 1e-5);
    }

    #[test]
    fn top10_matches_full_sort_oracle() {
        let mut rng = Rng::new(8);
        let recs: Vec<_> = (0..1000)
            .map(|i| random_tm(&format!("p{i:04}"), 1 + rng.below(12), 16, &mut rng))
            .collect();
        let corpus = EmbeddingCollection::from_records(EmbeddingKind::Passage, 16, recs).unwrap();
        for _ in 0..5 {
            let q = random_tm("q", 4, 16, &mut rng);
            let got: Vec<String> = search_exact(&q, &corpus, 10).unwrap().ids().map(String::from).collect();
            let mut all: Vec<(f32, String)> = corpus
                .iter()
                .map(|p| (maxsim(&q, p).unwrap().score, p.id.clone()))
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let want: Vec<String> = all.into_iter().take(10).map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ties_break_by_id() {
        let row = vec![1.0, 0.0];
        let corpus = EmbeddingCollection::from_records(
            EmbeddingKind::Passage,
            2,
            vec![tm("b", &[row.clone()]), tm("a", &[row.clone()]), tm("c", &[row.clone()])],
        )
        .unwrap();
        let r = search_exact(&tm("q", &[row]), &corpus, 3).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn score_matrix_cases() {
        let mut rng = Rng::new(3);
        let qs: Vec<_> = (0..8).map(|i| random_tm(&format!("q{i}"), 3, 8, &mut rng)).collect();
        let ps: Vec<_> = (0..8).map(|i| random_tm(&format!("p{i}"), 5, 8, &mut rng)).collect();
        let m = score_matrix(&qs, &ps).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = f64::from(maxsim(&qs[i], &ps[j]).unwrap().score);
                assert!((m.get(i, j) - want).abs() <= 1e-5 * want.abs().max(1.0));
            }
        }
        let one = score_matrix(&qs[..1], &ps[..1]).unwrap();
        assert_eq!(one.get(0, 0), f64::from(maxsim(&qs[0], &ps[0]).unwrap().score));
        let mut rev = ps.clone();
        rev.reverse();
        let mr = score_matrix(&qs, &rev).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(mr.get(i, j), m.get(i, 7 - j));
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        let list = RankedList {
            query_id: "q1".into(),
            entries: vec![
                RankedEntry { passage_id: "a".into(), score: 2.5 },
                RankedEntry { passage_id: "b".into(), score: 1.25 },
            ],
            k: 2,
            short: false,
            no_candidates: false,
        };
        write_tsv(&path, &[list.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "q1\t1\ta\t2.500000\nq1\t2\tb\t1.250000\n");
        assert_eq!(read_tsv(&path).unwrap(), vec![list]);
    }

    fn arb_tokens(dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, dim), 1..6)
    }

    proptest! {
        #[test]
        fn invariant_under_token_permutations(q in arb_tokens(4), d in arb_tokens(4), seed in 0u64..1000) {
            let base = maxsim(&tm("q", &q), &tm("d", &d)).unwrap().score;
            let mut rng = Rng::new(seed);
            let (mut q2, mut d2) = (q.clone(), d.clone());
            rng.shuffle(&mut q2);
            rng.shuffle(&mut d2);
            let perm = maxsim(&tm("q", &q2), &tm("d", &d2)).unwrap().score;
            prop_assert!((base - perm).abs() <= 1e-5 * base.abs().max(1.0));
        }

        #[test]
        fn appending_passage_token_never_decreases(q in arb_tokens(4), d in arb_tokens(4), extra in proptest::collection::vec(-1.0f32..1.0, 4)) {
            let before = maxsim(&tm("q", &q), &tm("d", &d)).unwrap().score;
            let mut d2 = d.clone();
            d2.push(extra);
            let after = maxsim(&tm("q", &q), &tm("d", &d2)).unwrap().score;
            prop_assert!(after >= before);
        }

        #[test]
        fn normalized_per_token_max_in_unit_range(q in arb_tokens(4), d in arb_tokens(4)) {
            let qn = tm("q", &q).normalized();
            let dn = tm("d", &d).normalized();
            let s = maxsim(&qn, &dn).unwrap().score;
            let l = qn.tokens() as f32;
            prop_assert!(s <= l + 1e-5 && s >= -l - 1e-5);
        }
    }
}
