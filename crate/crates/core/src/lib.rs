//! Executability-aware strategy retrieval engine.
//!
//! This crate holds the algorithmic core: the paired-solution corpus model
//! with per-problem-normalized usage statistics, the heterogeneous strategy
//! knowledge graph, a contrastively trained graph transformer encoder, the
//! Beta–Binomial executability estimator with a calibrated logistic
//! predictor, multi-route candidate retrieval, and bit-exact guidance
//! prompt assembly.
//!
//! Everything here is pure computation over in-memory data: deterministic
//! given its seeds, safe for concurrent reads after construction, and
//! `no_std`-compatible (with `alloc`). File formats, the CLI, and network
//! clients live in the companion `stratex-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod executability;
pub mod graph;
pub mod linalg;
pub mod num;
pub mod prompts;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod taxonomy;

pub use corpus::{Corpus, Problem, ProtocolConfig, Solution, Source, StrategyInstance, TrialRecord};
pub use embedding::{EmbeddingTable, EmbeddingVector, EMBEDDING_DIM};
pub use encoder::{EncoderParams, NodeEmbeddings, SupervisionSet, HIDDEN_DIM};
pub use executability::{BetaPrior, ExecutabilityScore, FeatureVector, PredictorParams};
pub use graph::{EdgeKind, EdgeRef, HeteroGraph, NodeKind, NodeRef, RetentionMap};
pub use retrieval::{Candidate, CandidateSet, Neighborhood, Route};
pub use taxonomy::{CategoryTemplate, RuleTable, SubjectGroup, TemplateId};
