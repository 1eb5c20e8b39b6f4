//! Contrastive training: negative sampling, triplet and InfoNCE losses,
//! Adam, and the step loop.

mod adam;
mod config;
mod fixtures;
mod loss;
mod negatives;
mod trainer;

pub use adam::{adam_update, AdamState};
pub use config::{AdamConfig, LossConfig, TrainConfig};
pub use fixtures::{grad_check_fixture, GradCheckFixture};
pub use loss::{
    combined_loss, contrastive_loss, infonce_from_logits, infonce_loss, infonce_terms, triplet_loss, ContrastiveBatch,
    LossParts,
};
pub use negatives::{sample_in_batch_negatives, semantic_negative_heads, semantic_negatives, InBatchNegatives, NegativePool};
pub use trainer::{
    loss_on_tape, stack_embeddings, train, train_with, training_relations, write_history, StepMetrics, TableIndex,
    TrainOutput, Trainer,
};
