//! Contrastive alignment of the pooling parameters with in-batch negatives.
//!
//! Only [`PoolingParams`](crate::qap::PoolingParams) are updated; the text
//! and visual embeddings are frozen inputs.

mod batches;
mod dataset;
mod loss;
mod optimizer;
mod train;

pub use batches::{make_batches, sample_positives, TrainBatch};
pub use dataset::{
    write_planted_dir, AlignmentDataset, GLOBAL_FILE, GOLD_FILE, PASSAGE_FILE, PATCH_FILE, QUERIES_FILE, TEXT_FILE,
};
pub use loss::{contrastive_loss, ContrastiveLoss};
pub use optimizer::{AdamW, AdamWConfig};
pub use train::{
    alignment_recall, batch_loss_and_grads, continue_training, mean_loss, outcome, train_alignment, write_loss_csv, StepRecord,
    TrainConfig, TrainOutcome, Trainer, OPTIMIZER_FILE, TRAIN_CONFIG_FILE,
};
