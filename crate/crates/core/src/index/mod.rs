//! Compressed token index: spherical k-means centroids, inverted posting
//! lists and per-dimension 2-bit residual codes, searched by centroid
//! probing followed by exact MaxSim over decoded candidates.

mod ivf;
mod kmeans;
mod persist;
mod quantizer;

pub use ivf::{
    encode_corpus, search_compressed, CompressedIndex, EncodeReport, IndexConfig, InvertedIndex, ResidualCodes,
    DEFAULT_NPROBE,
};
pub use kmeans::{train_centroids, Centroids};
pub use persist::{IndexMeta, INDEX_FORMAT_VERSION};
pub use quantizer::ResidualQuantizer;
