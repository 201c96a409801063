pub mod advisor;
pub mod cost_db;
pub mod design_space;
pub mod error;
pub mod evaluator;
pub mod explorer;
pub mod retrieval;
pub mod scalar;
pub mod templates;

pub use error::{Error, Result};

/// Score type used by the `f64` entry points.
pub type Score = f64;
/// BM25 parameters in `f64`.
pub type Bm25Params = retrieval::Bm25Params<Score>;
/// Retrieval hit in `f64`.
pub type Hit = retrieval::Hit<Score>;
