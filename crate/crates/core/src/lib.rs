//! Translation-based knowledge graph embeddings (TransE, TransR, STransE)
//! augmented with per-relation hyper-ellipsoid domains.
//!
//! The pipeline is staged:
//!
//! 1. [`graph`] loads triple files and extracts the head/tail domain of
//!    every relation from the training split.
//! 2. [`model`] and [`train`] fit a baseline embedding model with a
//!    margin-ranking loss.
//! 3. [`ellipsoid`] fits one Cholesky-parameterized hyper-ellipsoid per
//!    domain in the model's final space, orchestrated by [`domains`].
//! 4. [`eval`] ranks candidate entities with the baseline score plus the
//!    ellipsoid distance penalty and reports Mean Rank and Hits@n.

pub mod cli;
pub mod domains;
pub mod ellipsoid;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod train;

pub use domains::{domain_penalty, fit_all_domains, BoundDomains, DomainModel};
pub use ellipsoid::{Ellipsoid, FitConfig, LowerTriangular};
pub use error::{Error, Result};
pub use eval::{combined_score, evaluate, rank_entity, EvalOptions, EvalReport, Setting, TieMode};
pub use graph::{Domain, KnowledgeGraph, RelationCategory, Side, Triple, TripleFormat, Vocab};
pub use model::{Dissimilarity, EmbeddingModel, Variant};
pub use train::{train, NegativeSampling, TrainConfig};
