//! Cross-language API mapping by aligning code-token embedding spaces.
//!
//! The pipeline trains skip-gram embeddings for two normalized API-call
//! corpora, learns an initial linear map from a handful of seed pairs,
//! improves it adversarially and then refines it iteratively. Candidate
//! mappings for a source API are its mapped vector's nearest neighbors in
//! the target space.

pub mod adversarial;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod query;
pub mod refinement;
pub mod seeding;
pub mod synthetic;

pub use corpus::{CodeSequence, SignatureTable, Vocabulary};
pub use embedding::EmbeddingSpace;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, PipelineConfig, Stages};
pub use query::{batch_query, nearest_neighbors, Neighbor, QueryOutcome, QueryResult, TargetIndex};
pub use seeding::{solve_procrustes, MappingMatrix, SeedDictionary, Stage};
