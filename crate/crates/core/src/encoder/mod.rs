//! The bi-encoder: text features projected onto the unit sphere.
//!
//! Documents and labels share one projection. Texts are first turned into
//! sparse [`FeatureVector`]s by a [`Featurizer`] (hashed n-grams, or frozen
//! precomputed vectors), then [`encode`] maps them through the trainable
//! [`EncoderParams`] and normalizes. Training uses the margin triplet loss in
//! [`loss`] and the AdamW update in [`optim`].

mod checkpoint;
mod features;
pub mod loss;
pub mod optim;
mod params;

use thiserror::Error;

pub use checkpoint::{restore, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{
    fnv1a64, FeatureVector, Featurizer, Fnv1a, HashedFeaturizer, PrecomputedFeaturizer, DEFAULT_FEATURE_DIM,
};
pub use loss::{batch_loss_and_grad, triplet_loss_and_grad, AnchorTerm, Gradient};
pub use optim::{adamw_step, OptState};
pub use params::{encode, score, Embedding, EncoderParams, DEFAULT_EMBED_DIM};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("projection has (near) zero norm for this input")]
    ZeroNorm,
    #[error("feature index {index} out of range for dimension {dim}")]
    FeatureOutOfRange { index: usize, dim: usize },
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found:#x} is not readable (supported major {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("no precomputed features for text {0:?}")]
    UnknownText(String),
    #[error("bad feature file: {0}")]
    BadFeatureFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
