//! Hierarchical labels: schema, ingestion, iteration sampling, statistics.

pub mod ingest;
pub mod sampler;
pub mod schema;
pub mod stats;

pub use ingest::{ingest, AnnotatedImage, AnnotationRow, AnnotationTable, ConflictReport, Dataset, Split};
pub use sampler::{IterationSample, Sampler};
pub use schema::{load_schema, AttributeConfig, LabelTerm, TagConfig, TagSchema, TagSpec};
pub use stats::{dataset_stats, StatsTable};
