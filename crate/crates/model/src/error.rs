//! Error types of the model crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("no head for locale {0:?}")]
    NoHeadForLocale(String),
    #[error("locale {0:?} unknown to this bundle")]
    UnknownLocale(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {pt} outside product-type registry of size {n_pts}")]
    LabelOutOfRange { pt: u32, n_pts: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: lower the learning rate (current {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint magic (expected \"LQPT\")")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("checkpoint payload checksum mismatch")]
    ChecksumMismatch,
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    BadHeader(String),
}
