//! Data model, synthetic world generation, weak-label derivation, and
//! evaluation metrics for the multi-locale query-to-product-type workbench.

pub mod data;
pub mod divergence;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod oracles;
pub mod report;
pub mod rng;
pub mod synth;

pub use data::{
    bucket_locales, Catalog, ClickRecord, Dataset, ItemId, LabeledExample, LocaleId,
    LocaleRegistry, ProductTypeId, Provenance, PtRegistry, Split, FORMAT_HEADER,
};
pub use error::{DataError, DivergenceError, LabelError, MetricError, SynthError};
