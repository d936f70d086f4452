//! IO, file formats, service clients, and CLI orchestration for the
//! strategy retrieval engine.
//!
//! The algorithmic core lives in `stratex-core`; this crate adds the
//! versioned artifact files, the key=value configuration, run manifests,
//! the embedding/solver HTTP clients with their deterministic mocks, the
//! trial-collection harness, and the `stratex` command-line interface.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod http;
pub mod manifest;
pub mod pipeline;
pub mod solver;

pub use commands::{run, Cli, Command, Status};
