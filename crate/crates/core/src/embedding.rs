//! 384-dimensional text embeddings: storage, cosine similarity, exact
//! k-nearest-neighbor search, and temperature-scaled softmax weighting.
//!
//! Search is brute force on purpose: tables here are at most tens of
//! thousands of entries and exact, deterministic results (ties broken by
//! ascending id) matter more than speed.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::num;

/// Dimensionality of all sentence embeddings in the system.
pub const EMBEDDING_DIM: usize = 384;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingError {
    #[error("vector for `{id}` has {got} dimensions, expected {expected}")]
    WrongDimension {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("vector for `{id}` contains a non-finite value")]
    NonFinite { id: String },
    #[error("duplicate embedding id `{id}`")]
    DuplicateId { id: String },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vectors have mismatched dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding table is empty")]
    EmptyTable,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("softmax requires a non-empty input")]
    EmptyInput,
    #[error("softmax temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("no embedding stored for `{id}`")]
    Missing { id: String },
}

/// A single fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Validate dimension and finiteness; `id` is only used in errors.
    pub fn new(id: &str, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbeddingError::WrongDimension {
                id: id.into(),
                got: values.len(),
                expected: EMBEDDING_DIM,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { id: id.into() });
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// What kind of records a table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Problem,
    Strategy,
}

/// Immutable id → embedding map.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    kind: TableKind,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn new(kind: TableKind) -> Self {
        EmbeddingTable {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Build from (id, raw vector) pairs, rejecting duplicates and malformed
    /// vectors.
    pub fn from_entries<I>(kind: TableKind, entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = Self::new(kind);
        for (id, values) in entries {
            table.insert(id, values)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, id: String, values: Vec<f64>) -> Result<(), EmbeddingError> {
        let vector = EmbeddingVector::new(&id, values)?;
        if self.entries.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId { id });
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&EmbeddingVector, EmbeddingError> {
        self.get(id).ok_or_else(|| EmbeddingError::Missing { id: id.into() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EmbeddingVector)> {
        self.entries.iter()
    }

    /// Restrict the table to the given ids (ids without entries are skipped).
    pub fn restricted_to<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> EmbeddingTable {
        let mut out = Self::new(self.kind);
        for id in ids {
            if let Some(v) = self.entries.get(id) {
                out.entries.insert(id.into(), v.clone());
            }
        }
        out
    }
}

/// Cosine similarity over raw slices. Errors on dimension mismatch or a zero
/// vector (a zero vector indicates an upstream embedding failure and has no
/// defined direction).
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch(u.len(), v.len()));
    }
    let nu = linalg::norm(u);
    let nv = linalg::norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(linalg::dot(u, v) / (nu * nv))
}

/// Cosine similarity of two embedding vectors.
pub fn cosine_sim(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine(u.values(), v.values())
}

/// Exact k-nearest-neighbor search by descending cosine similarity.
///
/// Returns the top `min(k, |table|)` entries; equal similarities are ordered
/// by ascending id so results are fully deterministic.
pub fn knn(
    query: &EmbeddingVector,
    table: &EmbeddingTable,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::InvalidK);
    }
    if table.is_empty() {
        return Err(EmbeddingError::EmptyTable);
    }
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(table.len());
    for (id, v) in table.iter() {
        scored.push((id.clone(), cosine_sim(query, v)?));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Temperature-scaled softmax with max-subtraction for stability. Weights
/// sum to 1; temperature → 0⁺ concentrates all mass on the argmax.
pub fn softmax_weights(similarities: &[f64], temperature: f64) -> Result<Vec<f64>, EmbeddingError> {
    if similarities.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    if !(temperature > 0.0) {
        return Err(EmbeddingError::InvalidTemperature(temperature));
    }
    let max = similarities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities
        .iter()
        .map(|s| num::exp((s - max) / temperature))
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
