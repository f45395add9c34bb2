//! Synthetic embeddings for desk-scale experiments.
//!
//! The planted-concept generator builds a small world in which matching a
//! query to its passage requires both modalities:
//!
//! - each image contains several concepts; a concept is a *type* signature
//!   (shared across the dataset) plus an *instance* vector (unique to it);
//! - a concept is injected into a disjoint random subset of the image's
//!   patches, with additive Gaussian noise;
//! - a query's text tokens name only the concept type, so they select one
//!   concept of the image but say nothing about the instance;
//! - the gold passage carries tokens derived from the instance through a
//!   fixed hidden linear map, plus one token naming the type.
//!
//! Text alone therefore scores every same-type passage alike, which is the
//! text-dominant trap; resolving it requires reading the attended patches.

use serde::{Deserialize, Serialize};

use super::{EmbeddingCollection, EmbeddingKind, GoldPair, QueryImage, TokenMatrix};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub num_images: usize,
    pub concepts_per_image: usize,
    pub dim_t: usize,
    pub dim_v: usize,
    /// Patches per image (`l_v`); 49 mimics a 7×7 grid.
    pub patches: usize,
    pub patches_per_concept: usize,
    /// Text tokens per query (`l_t`); the first is a type-agnostic token.
    pub text_tokens: usize,
    /// Tokens per passage; half carry the instance, one the type, the rest
    /// are filler.
    pub passage_tokens: usize,
    /// Size of the shared concept-type vocabulary.
    pub num_types: usize,
    /// Norm of the additive Gaussian noise on every generated vector.
    pub noise: f64,
    /// Norm of visual vectors. Encoder hidden states are not unit-norm;
    /// after a final layer norm they sit near `sqrt(dim_v)`.
    pub visual_norm: f64,
    /// Weight of a direction shared by every passage token (the common
    /// component real encoders exhibit); the remainder carries content.
    pub passage_shared: f64,
    /// Dimension of the subspace instance vectors are drawn from; 0 means
    /// all of `dim_v`.
    pub instance_rank: usize,
    /// Size of the shared filler vocabulary passages draw their non-content
    /// tokens from; 0 draws a fresh random direction per token.
    pub filler_vocab: usize,
    pub seed: u64,
}

impl PlantedConfig {
    pub fn new(num_images: usize, concepts_per_image: usize, dim_t: usize, dim_v: usize, seed: u64) -> Self {
        Self {
            num_images,
            concepts_per_image,
            dim_t,
            dim_v,
            patches: 49,
            patches_per_concept: 4,
            text_tokens: 4,
            passage_tokens: 8,
            num_types: concepts_per_image,
            noise: 0.1,
            visual_norm: (dim_v as f64).sqrt(),
            passage_shared: 0.0,
            instance_rank: 0,
            filler_vocab: 0,
            seed,
        }
    }

    /// The desk-scale alignment benchmark: four concepts per image,
    /// `dim_t = 128`, `dim_v = 512`, concepts spread over 12 of 49 patches,
    /// instances in a rank-12 subspace, and passages sharing a common
    /// direction and a 16-word filler vocabulary.
    pub fn alignment_benchmark(num_images: usize, seed: u64) -> Self {
        Self {
            patches_per_concept: 12,
            passage_shared: 0.8,
            instance_rank: 12,
            filler_vocab: 16,
            ..Self::new(num_images, 4, 128, 512, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.concepts_per_image < 2 {
            return Err(Error::param("concepts_per_image must be at least 2"));
        }
        if self.dim_t < 4 || self.dim_v < 4 {
            return Err(Error::param(format!(
                "degenerate dims: dim_t={}, dim_v={} (minimum 4)",
                self.dim_t, self.dim_v
            )));
        }
        if self.num_types < self.concepts_per_image {
            return Err(Error::param("num_types must cover concepts_per_image"));
        }
        if self.patches_per_concept == 0
            || self.concepts_per_image * self.patches_per_concept > self.patches
        {
            return Err(Error::param("concept patches do not fit in the patch grid"));
        }
        if self.instance_rank > self.dim_v {
            return Err(Error::param("instance_rank exceeds dim_v"));
        }
        if !(0.0..1.0).contains(&self.passage_shared) || !(self.visual_norm > 0.0) {
            return Err(Error::param("passage_shared must lie in [0, 1) and visual_norm be positive"));
        }
        if self.text_tokens < 2 || self.passage_tokens < 3 {
            return Err(Error::param("need at least 2 text tokens and 3 passage tokens"));
        }
        Ok(())
    }
}

/// Planted-concept dataset: one query and one gold passage per concept.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDataset {
    pub config: PlantedConfig,
    /// Ids `q{image}_{concept}`, normalised per token.
    pub text_queries: EmbeddingCollection,
    /// Ids `img{image}`, one token each.
    pub visual_global: EmbeddingCollection,
    pub visual_patches: EmbeddingCollection,
    /// Ids `p{image}_{concept}`, normalised per token.
    pub passages: EmbeddingCollection,
    pub query_images: Vec<QueryImage>,
    pub gold: Vec<GoldPair>,
    /// Ground-truth instance direction (text space, unit norm) per query,
    /// aligned with `text_queries`.
    pub planted: Vec<Vec<f32>>,
    /// Patch indices carrying each query's concept, aligned likewise.
    pub concept_patches: Vec<Vec<usize>>,
}

struct World {
    type_keys: Vec<Vec<f64>>,
    type_text: Vec<Vec<f64>>,
    generic_text: Vec<f64>,
    shared_passage: Vec<f64>,
    filler: Vec<Vec<f64>>,
    /// Spanning vectors of the instance subspace; empty for full rank.
    instance_basis: Vec<Vec<f64>>,
    /// `dim_t × dim_v`, row-major.
    alignment: Vec<f64>,
}

impl World {
    fn instance(&self, rng: &mut Rng, dim_v: usize) -> Vec<f64> {
        if self.instance_basis.is_empty() {
            return rng.unit_vector(dim_v);
        }
        let mut u = vec![0.0; dim_v];
        for b in &self.instance_basis {
            let z = rng.normal();
            for (x, y) in u.iter_mut().zip(b) {
                *x += z * y;
            }
        }
        unit(u)
    }
}

fn noisy(base: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    let scale = noise / (base.len() as f64).sqrt();
    base.iter().map(|&v| v + scale * rng.normal()).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

fn scaled(v: &[f64], norm: f64) -> Vec<f32> {
    v.iter().map(|&x| (x * norm) as f32).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn synth_planted_dataset(config: &PlantedConfig) -> Result<PlantedDataset> {
    config.validate()?;
    let c = config;
    let root = Rng::new(c.seed);
    let mut wrng = root.fork(0);
    let world = World {
        type_keys: (0..c.num_types).map(|_| wrng.unit_vector(c.dim_v)).collect(),
        type_text: (0..c.num_types).map(|_| wrng.unit_vector(c.dim_t)).collect(),
        generic_text: wrng.unit_vector(c.dim_t),
        shared_passage: wrng.unit_vector(c.dim_t),
        alignment: (0..c.dim_t * c.dim_v)
            .map(|_| wrng.normal() / (c.dim_v as f64).sqrt())
            .collect(),
        instance_basis: (0..c.instance_rank).map(|_| wrng.unit_vector(c.dim_v)).collect(),
        filler: (0..c.filler_vocab).map(|_| wrng.unit_vector(c.dim_t)).collect(),
    };

    let mut text_queries = EmbeddingCollection::new(EmbeddingKind::TextQuery, c.dim_t);
    let mut visual_global = EmbeddingCollection::new(EmbeddingKind::VisualGlobal, c.dim_v);
    let mut visual_patches = EmbeddingCollection::new(EmbeddingKind::VisualPatch, c.dim_v);
    let mut passages = EmbeddingCollection::new(EmbeddingKind::Passage, c.dim_t);
    let mut query_images = Vec::new();
    let mut gold = Vec::new();
    let mut planted = Vec::new();
    let mut concept_patches = Vec::new();

    for img in 0..c.num_images {
        let mut rng = root.fork(1 + img as u64);
        let image_id = format!("img{img:05}");
        let types = rng.sample_indices(c.num_types, c.concepts_per_image);
        let instances: Vec<Vec<f64>> = (0..c.concepts_per_image).map(|_| world.instance(&mut rng, c.dim_v)).collect();
        let concept_vecs: Vec<Vec<f64>> = types
            .iter()
            .zip(&instances)
            .map(|(&t, u)| {
                world.type_keys[t]
                    .iter()
                    .zip(u)
                    .map(|(k, u)| (k + u) / std::f64::consts::SQRT_2)
                    .collect()
            })
            .collect();

        // Patch grid: background patches are fresh random directions.
        let layout = rng.sample_indices(c.patches, c.concepts_per_image * c.patches_per_concept);
        let mut patches: Vec<Vec<f64>> = (0..c.patches).map(|_| rng.unit_vector(c.dim_v)).collect();
        for (j, concept) in concept_vecs.iter().enumerate() {
            for &p in &layout[j * c.patches_per_concept..(j + 1) * c.patches_per_concept] {
                patches[p] = noisy(concept, c.noise, &mut rng);
            }
        }
        let patch_values: Vec<f32> = patches.iter().flat_map(|p| scaled(p, c.visual_norm)).collect();
        visual_patches.push(TokenMatrix::new(
            image_id.clone(),
            EmbeddingKind::VisualPatch,
            c.dim_v,
            patch_values,
        )?)?;

        let mut global = vec![0.0; c.dim_v];
        for cv in &concept_vecs {
            for (g, v) in global.iter_mut().zip(cv) {
                *g += v;
            }
        }
        let global = noisy(&unit(global), c.noise, &mut rng);
        visual_global.push(TokenMatrix::new(
            image_id.clone(),
            EmbeddingKind::VisualGlobal,
            c.dim_v,
            scaled(&global, c.visual_norm),
        )?)?;

        for (j, (&t, u)) in types.iter().zip(&instances).enumerate() {
            let qid = format!("q{img:05}_{j}");
            let pid = format!("p{img:05}_{j}");

            let mut qrows = vec![to_f32(&unit(noisy(&world.generic_text, c.noise, &mut rng)))];
            for _ in 1..c.text_tokens {
                qrows.push(to_f32(&unit(noisy(&world.type_text[t], c.noise, &mut rng))));
            }
            text_queries.push(TokenMatrix::from_rows(qid.clone(), EmbeddingKind::TextQuery, &qrows)?)?;

            let content = unit(
                (0..c.dim_t)
                    .map(|r| {
                        world.alignment[r * c.dim_v..(r + 1) * c.dim_v]
                            .iter()
                            .zip(u)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect(),
            );
            let n_content = c.passage_tokens / 2;
            let mut prows = Vec::with_capacity(c.passage_tokens);
            for _ in 0..n_content {
                prows.push(unit(noisy(&content, 2.0 * c.noise, &mut rng)));
            }
            prows.push(unit(noisy(&world.type_text[t], c.noise, &mut rng)));
            while prows.len() < c.passage_tokens {
                prows.push(if world.filler.is_empty() {
                    rng.unit_vector(c.dim_t)
                } else {
                    noisy(&world.filler[rng.below(world.filler.len())], c.noise, &mut rng)
                });
            }
            let w = c.passage_shared;
            let prows: Vec<Vec<f32>> = prows
                .iter()
                .map(|r| {
                    let mixed = r.iter().zip(&world.shared_passage).map(|(x, s)| w * s + (1.0 - w * w).sqrt() * x);
                    to_f32(&unit(mixed.collect()))
                })
                .collect();
            passages.push(TokenMatrix::from_rows(pid.clone(), EmbeddingKind::Passage, &prows)?)?;

            query_images.push(QueryImage {
                query_id: qid.clone(),
                image_id: image_id.clone(),
            });
            gold.push(GoldPair {
                query_id: qid,
                passage_id: pid,
            });
            planted.push(to_f32(&content));
            concept_patches.push(layout[j * c.patches_per_concept..(j + 1) * c.patches_per_concept].to_vec());
        }
    }

    Ok(PlantedDataset {
        config: config.clone(),
        text_queries,
        visual_global,
        visual_patches,
        passages,
        query_images,
        gold,
        planted,
        concept_patches,
    })
}

/// Passages whose tokens cluster around shared topic directions, plus
/// queries made of noisy copies of tokens from a source passage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredCorpusConfig {
    pub num_passages: usize,
    pub tokens_per_passage: usize,
    pub dim: usize,
    pub num_topics: usize,
    pub topics_per_passage: usize,
    /// Norm of the per-token noise around its topic direction.
    pub token_noise: f64,
    pub num_queries: usize,
    pub query_tokens: usize,
    pub query_noise: f64,
    pub seed: u64,
}

impl ClusteredCorpusConfig {
    pub fn new(num_passages: usize, dim: usize, num_queries: usize, seed: u64) -> Self {
        Self {
            num_passages,
            tokens_per_passage: 24,
            dim,
            num_topics: 800,
            topics_per_passage: 4,
            token_noise: 0.6,
            num_queries,
            query_tokens: 8,
            query_noise: 0.3,
            seed,
        }
    }
}

pub struct ClusteredCorpus {
    pub passages: EmbeddingCollection,
    pub queries: EmbeddingCollection,
    /// Index of the passage each query was drawn from.
    pub sources: Vec<usize>,
}

pub fn synth_clustered_corpus(config: &ClusteredCorpusConfig) -> Result<ClusteredCorpus> {
    let c = config;
    if c.dim < 4 {
        return Err(Error::param("degenerate dim (minimum 4)"));
    }
    if c.num_passages == 0 || c.tokens_per_passage == 0 || c.num_topics == 0 {
        return Err(Error::param("corpus needs passages, tokens and topics"));
    }
    let root = Rng::new(c.seed);
    let mut trng = root.fork(0);
    let topics: Vec<Vec<f64>> = (0..c.num_topics).map(|_| trng.unit_vector(c.dim)).collect();

    let mut passages = EmbeddingCollection::new(EmbeddingKind::Passage, c.dim);
    for p in 0..c.num_passages {
        let mut rng = root.fork(1 + p as u64);
        let picked = rng.sample_indices(c.num_topics, c.topics_per_passage.min(c.num_topics));
        let rows: Vec<Vec<f32>> = (0..c.tokens_per_passage)
            .map(|t| {
                let topic = &topics[picked[t % picked.len()]];
                to_f32(&unit(noisy(topic, c.token_noise, &mut rng)))
            })
            .collect();
        passages.push(TokenMatrix::from_rows(format!("d{p:05}"), EmbeddingKind::Passage, &rows)?)?;
    }

    let mut qrng = root.fork(u64::MAX - 1);
    let mut queries = EmbeddingCollection::new(EmbeddingKind::TextQuery, c.dim);
    let mut sources = Vec::with_capacity(c.num_queries);
    for q in 0..c.num_queries {
        let src = qrng.below(c.num_passages);
        let doc = &passages.records()[src];
        let picks = qrng.sample_indices(doc.tokens(), c.query_tokens.min(doc.tokens()));
        let rows: Vec<Vec<f32>> = picks
            .iter()
            .map(|&t| {
                let base: Vec<f64> = doc.row(t).iter().map(|&v| f64::from(v)).collect();
                to_f32(&unit(noisy(&base, c.query_noise, &mut qrng)))
            })
            .collect();
        queries.push(TokenMatrix::from_rows(format!("cq{q:04}"), EmbeddingKind::TextQuery, &rows)?)?;
        sources.push(src);
    }
    Ok(ClusteredCorpus {
        passages,
        queries,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn dot(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn minimal_dataset_shape() {
        let ds = synth_planted_dataset(&PlantedConfig::new(1, 2, 8, 8, 3)).unwrap();
        assert_eq!(ds.text_queries.len(), 2);
        assert_eq!(ds.passages.len(), 2);
        assert_eq!(ds.visual_global.len(), 1);
        let queries: HashSet<_> = ds.gold.iter().map(|g| &g.query_id).collect();
        let passages: HashSet<_> = ds.gold.iter().map(|g| &g.passage_id).collect();
        assert_eq!(queries.len(), 2);
        assert_eq!(passages.len(), 2);
    }

    #[test]
    fn deterministic() {
        let cfg = PlantedConfig::new(3, 3, 8, 6, 11);
        assert_eq!(synth_planted_dataset(&cfg).unwrap(), synth_planted_dataset(&cfg).unwrap());
    }

    #[test]
    fn parameter_errors() {
        assert!(synth_planted_dataset(&PlantedConfig::new(2, 1, 8, 8, 0)).is_err());
        assert!(synth_planted_dataset(&PlantedConfig::new(2, 2, 3, 8, 0)).is_err());
        assert!(synth_planted_dataset(&PlantedConfig::new(2, 2, 8, 3, 0)).is_err());
    }

    /// Scores each passage by its best token match to the planted instance
    /// direction; the gold passage must win for every query.
    #[test]
    fn planted_truth_oracle_recall_is_perfect() {
        let ds = synth_planted_dataset(&PlantedConfig::new(64, 4, 32, 32, 5)).unwrap();
        let gold: HashMap<_, _> = ds.gold.iter().map(|g| (g.query_id.clone(), g.passage_id.clone())).collect();
        for (q, concept) in ds.text_queries.iter().zip(&ds.planted) {
            let best = ds
                .passages
                .iter()
                .map(|p| (p.rows().map(|r| dot(r, concept)).fold(f32::MIN, f32::max), &p.id))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            assert_eq!(best.1, &gold[&q.id]);
        }
    }

    /// Text tokens carry only the concept type: a text-only MaxSim ranker
    /// cannot tell same-type passages apart.
    #[test]
    fn text_alone_is_uninformative() {
        let ds = synth_planted_dataset(&PlantedConfig::new(64, 4, 32, 32, 6)).unwrap();
        let mut hits = 0;
        for (qi, q) in ds.text_queries.iter().enumerate() {
            let best = ds
                .passages
                .iter()
                .enumerate()
                .map(|(pi, p)| {
                    let s: f32 = q
                        .rows()
                        .map(|qr| p.rows().map(|pr| dot(qr, pr)).fold(f32::MIN, f32::max))
                        .sum();
                    (s, pi)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            if best.1 == qi {
                hits += 1;
            }
        }
        let r1 = hits as f64 / ds.text_queries.len() as f64;
        assert!(r1 < 0.15, "text-only R@1 = {r1}");
    }

    #[test]
    fn passage_shuffle_keeps_gold_semantics() {
        let ds = synth_planted_dataset(&PlantedConfig::new(4, 3, 8, 8, 2)).unwrap();
        let mut recs = ds.passages.records().to_vec();
        Rng::new(1).shuffle(&mut recs);
        let shuffled = EmbeddingCollection::from_records(EmbeddingKind::Passage, 8, recs).unwrap();
        for g in &ds.gold {
            assert_eq!(shuffled.get(&g.passage_id), ds.passages.get(&g.passage_id));
        }
    }

    #[test]
    fn visual_globals_have_one_token() {
        let ds = synth_planted_dataset(&PlantedConfig::new(3, 2, 8, 8, 9)).unwrap();
        assert!(ds.visual_global.iter().all(|g| g.tokens() == 1));
        assert!(ds.visual_patches.iter().all(|p| p.tokens() == 49));
    }

    #[test]
    fn clustered_corpus_is_deterministic() {
        let cfg = ClusteredCorpusConfig::new(20, 16, 5, 4);
        let a = synth_clustered_corpus(&cfg).unwrap();
        let b = synth_clustered_corpus(&cfg).unwrap();
        assert_eq!(a.passages, b.passages);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.sources, b.sources);
    }
}
