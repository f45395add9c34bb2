//! Response-to-passage dataset construction.
//!
//! Dialogue turns about images become retrieval pairs: retrieval-irrelevant
//! turns are filtered out, short responses are padded with the question's
//! nouns, and each response is embedded in a passage made of retrieved
//! knowledge-base text, `[D₁; R; D₂; …; D_k]`.

mod filter;
mod pipeline;
mod retrieve;
pub mod text;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{
    classify, compensate_simple, content_drop, filter_and_classify, DropReason, Filtered, SourcedRecord,
    AFFIRMATIONS, COMPENSATION_SEPARATOR, IRRELEVANT_QUERY_PATTERNS, SIMPLE_MAX_WORDS,
};
pub use pipeline::{
    build_dataset, convert, image_passage_records, interleave, run_pipeline, write_dataset, ConstructedPassage,
    Conversion, DatasetRecord, Provenance, R2pOutput, R2pStats, DUMMY_PROMPTS,
};
pub use retrieve::{Bm25, EmbeddingRetriever, PassageRetriever};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct R2pConfig {
    /// Passages retrieved per response.
    pub k: usize,
    pub max_pairs_per_image: usize,
    /// Detailed responses with fewer characters are dropped.
    pub min_detailed_len: usize,
    /// Sentences kept from each retrieved passage.
    pub truncate_sentences: usize,
    /// Whitespace tokens kept from each question.
    pub max_query_tokens: usize,
    pub irrelevant_patterns: Vec<String>,
}

impl Default for R2pConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_pairs_per_image: 12,
            min_detailed_len: 30,
            truncate_sentences: 3,
            max_query_tokens: 128,
            irrelevant_patterns: IRRELEVANT_QUERY_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl R2pConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_pairs_per_image == 0 || self.min_detailed_len == 0 || self.truncate_sentences == 0 || self.max_query_tokens == 0 {
            return Err(Error::param("r2p counts must all be positive"));
        }
        Ok(())
    }
}
