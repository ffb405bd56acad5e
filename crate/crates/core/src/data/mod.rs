//! Rating ingestion, partially overlapped dataset construction, batching and
//! synthetic data.

mod batch;
mod dataset;
mod ingest;
pub mod io;
mod matrix;
mod synthetic;

pub use batch::{make_batches, PairedBatch};
pub use dataset::{
    build_pocdr_dataset, sample_overlap, shared_pool, DomainData, OverlapMap, PocdrDataset, Split,
    SplitKind,
};
pub use ingest::{ingest_and_preprocess, PreprocessConfig, Rating, RatingLog};
pub use matrix::{Domain, InteractionMatrix};
pub use synthetic::{generate_synthetic, SyntheticConfig};
