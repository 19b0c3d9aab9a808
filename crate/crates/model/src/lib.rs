//! Hashing tokenizer, from-scratch transformer encoder with manual
//! reverse-mode gradients, and the multi-locale classifier variants:
//! per-locale heads, unified locale-agnostic, and unified locale-aware.

pub mod bundle;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use bundle::{ModelBundle, Prediction, VariantKind};
pub use encoder::EncoderConfig;
pub use error::ModelError;
pub use tokenizer::TokenizerConfig;
pub use train::{train, EpochStats, TrainConfig};
