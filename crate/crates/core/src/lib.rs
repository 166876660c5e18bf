//! Soft sensing with a learned sensor graph and graph attention.
//!
//! The pipeline windows multivariate process data, learns one embedding per
//! input sensor, links each sensor to its most cosine-similar peers, runs a
//! single-head graph attention layer over each window and regresses the
//! held-out target through an embedding-gated readout. Correlation and
//! attention matrices can be exported for inspection.

pub mod benchmark;
pub mod checkpoint;
pub mod data;
pub mod discovery;
pub mod error;
pub mod graph;
pub mod matrix_csv;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use checkpoint::Checkpoint;
pub use data::{ProcessDataset, WindowSample};
pub use error::{Error, Result};
pub use graph::{Adjacency, EmbeddingTable, LearnedGraph};
pub use metrics::MetricsReport;
pub use model::{ModelConfig, ModelParams, SoftSensor};
pub use training::TrainConfig;
