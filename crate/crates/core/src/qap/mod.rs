//! Query-side mapping network: global projection, query-guided attentive
//! pooling and stage-dependent assembly of the query token matrix.

mod assemble;
pub mod checkpoint;
mod global;
mod params;
mod pooling;

pub use assemble::{assemble_query, AssembledQuery, MultimodalQueryInput, Stage};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use global::{project_global, project_global_backward, GlobalProjection};
pub use params::{Activation, PoolingDims, PoolingGrads, PoolingParams, LAYER_NAMES};
pub use pooling::{
    attentive_pool, attentive_pool_backward, attentive_pool_clamped, AttentionTrace, PooledVisual,
};
