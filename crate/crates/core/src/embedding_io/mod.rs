//! Token-embedding files, JSONL records, and synthetic data.
//!
//! Binary layout of an embedding collection (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "MIREEMB0"
//! version   u32
//! kind      u8       0 text_query | 1 passage | 2 visual_patch | 3 visual_global
//! dim       u32
//! count     u64
//! count × { id_len u32, id UTF-8, tokens u32, tokens·dim × f32 }
//! ```

mod format;
mod records;
pub mod synth;

pub use format::{EmbeddingCollection, EmbeddingKind, TokenMatrix, FORMAT_VERSION, MAGIC};
pub use records::{
    read_jsonl, read_jsonl_lenient, write_jsonl, GoldPair, PassageRecord, QaRecord, QueryImage,
    RawQaLine, ResponseKind,
};
pub use synth::{
    synth_clustered_corpus, synth_planted_dataset, ClusteredCorpus, ClusteredCorpusConfig,
    PlantedConfig, PlantedDataset,
};
