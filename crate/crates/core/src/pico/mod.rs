//! Partial-label training with contrastive prototypes.
//!
//! Each batch embeds two augmented views, predicts a label inside each
//! candidate set, moves the class prototypes toward the query embeddings,
//! pulls same-label embeddings together with a contrastive loss against a
//! momentum-encoded queue, and slowly shifts each pseudo-target toward its
//! nearest candidate prototype.

mod loss;
mod prototypes;
mod queue;
mod targets;
mod train;

pub use loss::{classification_loss, contrastive_loss};
pub use prototypes::{PrototypeBank, PrototypeMode};
pub use queue::{
    knn_positive_set, noisy_positive_set, select_positives, AnchorInfo, EmbeddingQueue, Pool,
    PoolMeta, PositiveStrategy, QueueEntry,
};
pub use targets::{
    disambiguate, nearest_prototype_onehot, soft_prototype_probs, uniform_target, PseudoTargets,
    TargetPolicy,
};
pub use train::{
    embed_dataset, pico_epoch, BatchLosses, CleanStats, EpochReport, LoopConfig, PicoConfig,
    TrainState,
};

pub(crate) use train::{run_epoch, PlusBatch};
