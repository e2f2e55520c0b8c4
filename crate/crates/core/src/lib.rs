//! Compressed embedding tables for recommendation models.
//!
//! The crate provides trainable compressed embedding stores, compressors
//! for frozen embedding matrices, a solver that sizes both to a memory
//! budget, a small CTR model to train them with, and the metrics used to
//! compare them.

/// Library version embedded in every benchmark report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod budget;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod hash;
pub mod matrix;
pub mod memory;
pub mod model;
pub mod optim;
pub mod posttrain;
pub mod rng;
pub mod space;
pub mod sparse;
pub mod stores;

pub use budget::{solve, solve_codec, CompressionPlan, Method, PlanParams, SolverConfig};
pub use checkpoint::Checkpoint;
pub use data::{generate, Dataset, SyntheticSpec};
pub use error::{Error, Result};
pub use hash::HashFamily;
pub use eval::{auc, recall_overlap, MetricsReport};
pub use matrix::{DenseMatrix, Real};
pub use memory::{compression_ratio, sparse_bytes, SparseFormat};
pub use model::{train, DlrmLite, TrainConfig, TrainReport};
pub use optim::{AdamState, Optimizer};
pub use posttrain::{compress, load_codec, Codec};
pub use space::FeatureSpace;
pub use sparse::SparseMatrix;
pub use stores::{load_store, EmbeddingStore, InitConfig};
