//! Error types shared across the core crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or wrong format header (expected \"#localeq-format v1\")")]
    BadFormatHeader,
    #[error("missing click-log column header")]
    MissingColumnHeader,
    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("name {name:?} not present in frozen registry")]
    UnknownName { name: String },
    #[error("line {line}: name {name:?} not present in frozen registry")]
    UnknownNameAt { line: usize, name: String },
    #[error("item {item} maps to more than one product type")]
    ItemPtConflict { item: u64 },
    #[error("line {line}: item {item} maps to more than one product type")]
    ItemPtConflictAt { line: usize, item: u64 },
    #[error("label set for query {query:?} is empty")]
    EmptyLabelSet { query: String },
    #[error("line {line}: label set for query {query:?} is empty")]
    EmptyLabelSetAt { line: usize, query: String },
    #[error("query {query:?} contains tab or newline and cannot be written as TSV")]
    UnserializableQuery { query: String },
}

impl DataError {
    /// Attaches a source line number to registry and label errors.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            DataError::UnknownName { name } => DataError::UnknownNameAt { line, name },
            DataError::ItemPtConflict { item } => DataError::ItemPtConflictAt { line, item },
            DataError::EmptyLabelSet { query } => DataError::EmptyLabelSetAt { line, query },
            other => other,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("cannot build disjoint term pools: n_pts * terms_per_pt = {needed} exceeds vocab_size {vocab}")]
    VocabTooSmall { needed: usize, vocab: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("split {0} is empty; not enough query templates")]
    EmptySplit(&'static str),
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("threshold {0} outside [0.5, 1)")]
    BadThreshold(f64),
    #[error("no trainable labels: every aggregate fell at or below the threshold")]
    NoTrainableLabels,
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no gold pairs in scored input")]
    NoGoldPairs,
    #[error("empty evaluation dataset")]
    EmptyEval,
    #[error("pearson correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("pearson correlation undefined: zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("locale {0} has no gold pairs")]
    LocaleWithoutGold(String),
    #[error("scoring failed: {0}")]
    Scoring(String),
}

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("distributions disagree on product-type registry size: {0} vs {1}")]
    RegistryMismatch(usize, usize),
    #[error("no shared queries meet the min_clicks={0} floor for this locale pair")]
    EmptyIntersection(u64),
}
