//! Alignment-training data held as `f64` matrices.
//!
//! On disk a dataset directory contains:
//!
//! ```text
//! text_queries.emb    text_query tokens, id = query id
//! visual_global.emb   visual_global tokens, id = image id
//! visual_patch.emb    visual_patch tokens, id = image id
//! passages.emb        passage tokens, id = passage id
//! queries.jsonl       {"query_id", "image_id"}
//! gold.jsonl          {"query_id", "passage_id"}
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::embedding_io::{
    read_jsonl, write_jsonl, EmbeddingCollection, EmbeddingKind, GoldPair, PlantedDataset, QueryImage,
};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, Matrix};
use crate::qap::MultimodalQueryInput;

pub const TEXT_FILE: &str = "text_queries.emb";
pub const GLOBAL_FILE: &str = "visual_global.emb";
pub const PATCH_FILE: &str = "visual_patch.emb";
pub const PASSAGE_FILE: &str = "passages.emb";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentDataset {
    pub queries: Vec<MultimodalQueryInput>,
    pub passage_ids: Vec<String>,
    /// Unit-row passage tokens.
    pub passages: Vec<Matrix>,
    /// Gold passage indices per query.
    pub gold: Vec<Vec<usize>>,
}

fn normalized(m: Matrix) -> Matrix {
    let mut m = m;
    l2_normalize_rows(&mut m);
    m
}

impl AlignmentDataset {
    /// Joins the four embedding collections through the query/image and
    /// gold tables. Query text and passage tokens are L2-normalised here.
    pub fn from_parts(
        text: &EmbeddingCollection,
        global: &EmbeddingCollection,
        patches: &EmbeddingCollection,
        passages: &EmbeddingCollection,
        query_images: &[QueryImage],
        gold: &[GoldPair],
    ) -> Result<Self> {
        let expect = [
            (text, EmbeddingKind::TextQuery),
            (global, EmbeddingKind::VisualGlobal),
            (patches, EmbeddingKind::VisualPatch),
            (passages, EmbeddingKind::Passage),
        ];
        for (c, kind) in expect {
            if c.kind() != kind {
                return Err(Error::param(format!("expected a {kind} collection, got {}", c.kind())));
            }
        }
        if text.dim() != passages.dim() {
            return Err(Error::shape(format!(
                "text dim {} differs from passage dim {}",
                text.dim(),
                passages.dim()
            )));
        }
        if global.dim() != patches.dim() {
            return Err(Error::shape("global and patch embeddings differ in dim"));
        }

        let passage_ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
        let passage_mats: Vec<Matrix> = passages.iter().map(|p| normalized(p.to_matrix())).collect();

        let mut gold_of: HashMap<&str, Vec<usize>> = HashMap::new();
        for g in gold {
            let idx = passages
                .position(&g.passage_id)
                .ok_or_else(|| Error::param(format!("gold passage {} not in the passage file", g.passage_id)))?;
            let entry = gold_of.entry(g.query_id.as_str()).or_default();
            if !entry.contains(&idx) {
                entry.push(idx);
            }
        }

        let mut queries = Vec::with_capacity(query_images.len());
        let mut gold_idx = Vec::with_capacity(query_images.len());
        for qi in query_images {
            let t = text
                .get(&qi.query_id)
                .ok_or_else(|| Error::param(format!("query {} has no text embedding", qi.query_id)))?;
            let g = global
                .get(&qi.image_id)
                .ok_or_else(|| Error::param(format!("image {} has no global embedding", qi.image_id)))?;
            let m = patches
                .get(&qi.image_id)
                .ok_or_else(|| Error::param(format!("image {} has no patch embeddings", qi.image_id)))?;
            let Some(gs) = gold_of.get(qi.query_id.as_str()) else {
                return Err(Error::param(format!("query {} has no gold passage", qi.query_id)));
            };
            queries.push(MultimodalQueryInput::new(
                qi.query_id.clone(),
                normalized(t.to_matrix()),
                g.values().iter().map(|&v| f64::from(v)).collect(),
                m.to_matrix(),
            ));
            gold_idx.push(gs.clone());
        }
        Ok(Self { queries, passage_ids, passages: passage_mats, gold: gold_idx })
    }

    pub fn from_planted(d: &PlantedDataset) -> Result<Self> {
        Self::from_parts(&d.text_queries, &d.visual_global, &d.visual_patches, &d.passages, &d.query_images, &d.gold)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let text = EmbeddingCollection::read(dir.join(TEXT_FILE))?;
        let global = EmbeddingCollection::read(dir.join(GLOBAL_FILE))?;
        let patches = EmbeddingCollection::read(dir.join(PATCH_FILE))?;
        let passages = EmbeddingCollection::read(dir.join(PASSAGE_FILE))?;
        let queries: Vec<QueryImage> = read_jsonl(dir.join(QUERIES_FILE))?;
        let gold: Vec<GoldPair> = read_jsonl(dir.join(GOLD_FILE))?;
        Self::from_parts(&text, &global, &patches, &passages, &queries, &gold)
    }

    /// Queries `range` with only their gold passages, re-indexed. Used to
    /// hold out images for evaluation.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.is_empty() {
            return Err(Error::param(format!("query range {range:?} outside 0..{}", self.len())));
        }
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut passage_ids = Vec::new();
        let mut passages = Vec::new();
        let mut gold = Vec::new();
        for g in &self.gold[range.clone()] {
            let mut out = Vec::with_capacity(g.len());
            for &p in g {
                let idx = *remap.entry(p).or_insert_with(|| {
                    passage_ids.push(self.passage_ids[p].clone());
                    passages.push(self.passages[p].clone());
                    passages.len() - 1
                });
                out.push(idx);
            }
            gold.push(out);
        }
        Ok(Self { queries: self.queries[range].to_vec(), passage_ids, passages, gold })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// `(d_t, d_v)`.
    pub fn dims(&self) -> (usize, usize) {
        let q = &self.queries[0];
        (q.e_t.cols(), q.v_g.as_ref().map_or(0, |g| g.len()))
    }
}

/// Writes a planted dataset in the directory layout above.
pub fn write_planted_dir(dir: &Path, d: &PlantedDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    d.text_queries.write(dir.join(TEXT_FILE))?;
    d.visual_global.write(dir.join(GLOBAL_FILE))?;
    d.visual_patches.write(dir.join(PATCH_FILE))?;
    d.passages.write(dir.join(PASSAGE_FILE))?;
    write_jsonl(dir.join(QUERIES_FILE), &d.query_images)?;
    write_jsonl(dir.join(GOLD_FILE), &d.gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::{synth_planted_dataset, PlantedConfig};

    #[test]
    fn planted_round_trip_through_dir() {
        let d = synth_planted_dataset(&PlantedConfig::new(6, 2, 8, 8, 1)).unwrap();
        let a = AlignmentDataset::from_planted(&d).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a.dims(), (8, 8));
        assert!(a.gold.iter().all(|g| g.len() == 1));
        let dir = tempfile::tempdir().unwrap();
        write_planted_dir(dir.path(), &d).unwrap();
        let b = AlignmentDataset::load_dir(dir.path()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_links_are_errors() {
        let d = synth_planted_dataset(&PlantedConfig::new(3, 2, 8, 8, 1)).unwrap();
        let mut qi = d.query_images.clone();
        qi[0].image_id = "nope".into();
        let r = AlignmentDataset::from_parts(&d.text_queries, &d.visual_global, &d.visual_patches, &d.passages, &qi, &d.gold);
        assert!(matches!(r, Err(Error::Param(_))));
        let r = AlignmentDataset::from_parts(
            &d.text_queries,
            &d.visual_global,
            &d.visual_patches,
            &d.passages,
            &d.query_images,
            &d.gold[1..],
        );
        assert!(r.is_err());
    }

    #[test]
    fn subset_keeps_own_gold() {
        let d = synth_planted_dataset(&PlantedConfig::new(5, 2, 8, 8, 1)).unwrap();
        let a = AlignmentDataset::from_planted(&d).unwrap();
        let s = a.subset(4..10).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.passages.len(), 6);
        for (q, g) in s.queries.iter().zip(&s.gold) {
            assert_eq!(s.passage_ids[g[0]], q.id.replace('q', "p"));
        }
        assert!(a.subset(8..11).is_err());
    }

    #[test]
    fn multiple_gold_collected() {
        let d = synth_planted_dataset(&PlantedConfig::new(3, 2, 8, 8, 1)).unwrap();
        let mut gold = d.gold.clone();
        gold.push(GoldPair { query_id: gold[0].query_id.clone(), passage_id: gold[1].passage_id.clone() });
        gold.push(gold[0].clone());
        let a = AlignmentDataset::from_parts(&d.text_queries, &d.visual_global, &d.visual_patches, &d.passages, &d.query_images, &gold)
            .unwrap();
        assert_eq!(a.gold[0], vec![0, 1]);
    }
}
