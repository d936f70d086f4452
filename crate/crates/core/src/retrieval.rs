//! Multi-route candidate retrieval and the end-to-end retrieve pipeline.
//!
//! A new problem is embedded, its neighborhood of semantically similar
//! train problems found, and a transferred graph representation `h_x` built
//! as the softmax-weighted sum of neighbor embeddings. Three routes then
//! propose candidates: category-conditioned retrieval over retained sources
//! (A), transfer of strategies empirically effective on the neighborhood
//! (B), and a semantic fallback that only fires when A and B come up short
//! (C). The merged pool is scored by the calibrated executability predictor
//! and the top strategies returned, at most five.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Source;
use crate::embedding::{self, EmbeddingTable, EmbeddingVector};
use crate::encoder::NodeEmbeddings;
use crate::executability::{self, FeatureVector, PredictorParams};
use crate::graph::{HeteroGraph, NodeRef, RetentionMap};

/// Retrieval route identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Route {
    A,
    B,
    C,
}

/// Per-route evidence for why a candidate was retrieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "route")]
pub enum Provenance {
    CategoryMatch { category_id: String, similarity: f64 },
    NeighborTransfer { problem_id: String, posterior_mean: f64 },
    SemanticFallback { similarity: f64 },
}

/// Ranked semantic neighborhood of a query problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub problem_ids: Vec<String>,
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("missing upstream artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("neighborhood is empty")]
    EmptyNeighborhood,
    #[error("graph has no category nodes")]
    NoCategories,
    #[error("merged candidate set is empty")]
    EmptyCandidates,
    #[error("strategy `{0}` appears with conflicting sources (data corruption)")]
    SourceConflict(String),
    #[error("no embedding stored for `{0}`")]
    MissingEmbedding(String),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Executability(#[from] executability::ExecError),
}

/// A retrieved strategy with full route provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub strategy_id: String,
    pub source: Source,
    pub routes: BTreeSet<Route>,
    pub provenance: Vec<Provenance>,
}

/// Candidates keyed by strategy id, duplicates merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    by_id: BTreeMap<String, Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn contains(&self, strategy_id: &str) -> bool {
        self.by_id.contains_key(strategy_id)
    }

    pub fn get(&self, strategy_id: &str) -> Option<&Candidate> {
        self.by_id.get(strategy_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.by_id.values()
    }
}

/// Posterior mean executability store keyed by (problem id, strategy node
/// id), the supervision signal Route B transfers across the neighborhood.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecScoreStore {
    by_problem: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ExecScoreStore {
    pub fn insert(&mut self, problem_id: impl Into<String>, strategy_id: impl Into<String>, posterior: f64) {
        self.by_problem
            .entry(problem_id.into())
            .or_default()
            .insert(strategy_id.into(), posterior);
    }

    pub fn get(&self, problem_id: &str, strategy_id: &str) -> Option<f64> {
        self.by_problem.get(problem_id)?.get(strategy_id).copied()
    }

    pub fn scored_on(&self, problem_id: &str) -> impl Iterator<Item = (&String, f64)> {
        self.by_problem
            .get(problem_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k, *v)))
    }

    /// Mean posterior per strategy node across all problems it was tried on.
    pub fn node_means(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for per_problem in self.by_problem.values() {
            for (sid, score) in per_problem {
                let entry = sums.entry(sid.clone()).or_insert((0.0, 0));
                entry.0 += score;
                entry.1 += 1;
            }
        }
        sums.into_iter()
            .map(|(sid, (total, n))| (sid, total / n as f64))
            .collect()
    }
}

/// Build the ranked k-nearest neighborhood of a query embedding over the
/// train problems, with softmax transfer weights.
pub fn build_neighborhood(
    x_embedding: &EmbeddingVector,
    train_problems: &EmbeddingTable,
    k: usize,
    temperature: f64,
) -> Result<Neighborhood, RetrievalError> {
    let ranked = embedding::knn(x_embedding, train_problems, k)?;
    let (problem_ids, similarities): (Vec<String>, Vec<f64>) = ranked.into_iter().unzip();
    let weights = embedding::softmax_weights(&similarities, temperature)?;
    Ok(Neighborhood {
        problem_ids,
        similarities,
        weights,
    })
}

/// Transferred problem representation: the softmax-weighted sum of the
/// neighborhood's graph embeddings.
pub fn problem_representation(
    neighborhood: &Neighborhood,
    node_embeddings: &NodeEmbeddings,
) -> Result<Vec<f64>, RetrievalError> {
    if neighborhood.problem_ids.is_empty() {
        return Err(RetrievalError::EmptyNeighborhood);
    }
    let mut h_x = alloc::vec![0.0; crate::encoder::HIDDEN_DIM];
    for (pid, w) in neighborhood.problem_ids.iter().zip(neighborhood.weights.iter()) {
        let h = node_embeddings
            .get(&NodeRef::problem(pid.clone()))
            .ok_or_else(|| RetrievalError::MissingEmbedding(pid.clone()))?;
        crate::linalg::axpy(&mut h_x, h, *w);
    }
    Ok(h_x)
}

/// Candidates per selected category in Route A.
pub const ROUTE_A_PER_CATEGORY: usize = 10;
/// Categories selected in Route A.
pub const ROUTE_A_CATEGORIES: usize = 2;
/// Fallback cap in Route C.
pub const ROUTE_C_LIMIT: usize = 20;

fn strategy_embedding<'e>(
    node_embeddings: &'e NodeEmbeddings,
    strategy_id: &str,
) -> Result<&'e Vec<f64>, RetrievalError> {
    node_embeddings
        .get(&NodeRef::strategy(strategy_id))
        .ok_or_else(|| RetrievalError::MissingEmbedding(strategy_id.into()))
}

/// Route A: category-conditioned retrieval.
///
/// Scores every category node by cosine to `h_x`, keeps the top 2 (ties by
/// ascending id), and within each takes up to 10 retained-source strategies
/// by cosine to `h_x` descending.
pub fn route_a(
    h_x: &[f64],
    graph: &HeteroGraph,
    node_embeddings: &NodeEmbeddings,
    retention: &RetentionMap,
) -> Result<Vec<Candidate>, RetrievalError> {
    let mut category_scores: Vec<(String, f64)> = Vec::new();
    for cid in graph.category_ids() {
        let h_c = node_embeddings
            .get(&NodeRef::category(cid.clone()))
            .ok_or_else(|| RetrievalError::MissingEmbedding(cid.clone()))?;
        category_scores.push((cid.clone(), embedding::cosine(h_x, h_c)?));
    }
    if category_scores.is_empty() {
        return Err(RetrievalError::NoCategories);
    }
    category_scores.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    category_scores.truncate(ROUTE_A_CATEGORIES);

    let mut out = Vec::new();
    for (cid, _) in &category_scores {
        let mut scored: Vec<(String, f64, Source)> = Vec::new();
        for sid in graph.category_member_ids(cid) {
            let meta = graph.strategy_meta(sid).expect("member has meta");
            if !retention.retained(cid, &meta.template_id).contains(&meta.source) {
                continue;
            }
            let h_s = strategy_embedding(node_embeddings, sid)?;
            scored.push((sid.clone(), embedding::cosine(h_x, h_s)?, meta.source));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
        scored.truncate(ROUTE_A_PER_CATEGORY);
        for (sid, sim, source) in scored {
            out.push(Candidate {
                strategy_id: sid,
                source,
                routes: BTreeSet::from([Route::A]),
                provenance: alloc::vec![Provenance::CategoryMatch {
                    category_id: cid.clone(),
                    similarity: sim,
                }],
            });
        }
    }
    debug_assert!(out.len() <= ROUTE_A_CATEGORIES * ROUTE_A_PER_CATEGORY);
    Ok(out)
}

/// Route B: problem-transfer retrieval.
///
/// Every strategy whose posterior mean executability on a neighborhood
/// problem reaches `delta` is carried over, with the neighbor recorded as
/// provenance. No trials means an empty contribution.
pub fn route_b(
    neighborhood: &Neighborhood,
    scores: &ExecScoreStore,
    graph: &HeteroGraph,
    delta: f64,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for pid in &neighborhood.problem_ids {
        for (sid, posterior) in scores.scored_on(pid) {
            if posterior < delta {
                continue;
            }
            let Some(meta) = graph.strategy_meta(sid) else {
                continue;
            };
            out.push(Candidate {
                strategy_id: sid.clone(),
                source: meta.source,
                routes: BTreeSet::from([Route::B]),
                provenance: alloc::vec![Provenance::NeighborTransfer {
                    problem_id: pid.clone(),
                    posterior_mean: posterior,
                }],
            });
        }
    }
    out
}

/// Route C: semantic fallback.
///
/// Skipped entirely while the current pool already has `trigger_min`
/// candidates; otherwise returns up to `limit` strategy nodes by cosine to
/// `h_x`, never re-adding an id already present.
pub fn route_c(
    h_x: &[f64],
    graph: &HeteroGraph,
    node_embeddings: &NodeEmbeddings,
    current: &CandidateSet,
    trigger_min: usize,
    limit: usize,
) -> Result<Vec<Candidate>, RetrievalError> {
    if limit == 0 {
        return Err(RetrievalError::InvalidConfig("route C limit must be at least 1"));
    }
    if current.len() >= trigger_min {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(String, f64, Source)> = Vec::new();
    for (sid, meta) in graph.strategy_nodes() {
        if current.contains(sid) {
            continue;
        }
        let h_s = strategy_embedding(node_embeddings, sid)?;
        scored.push((sid.clone(), embedding::cosine(h_x, h_s)?, meta.source));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    scored.truncate(limit);
    Ok(scored
        .into_iter()
        .map(|(sid, sim, source)| Candidate {
            strategy_id: sid,
            source,
            routes: BTreeSet::from([Route::C]),
            provenance: alloc::vec![Provenance::SemanticFallback { similarity: sim }],
        })
        .collect())
}

/// Union route outputs into a candidate set keyed by strategy id: route
/// flags union, provenance concatenates, sources must agree.
pub fn merge(route_outputs: Vec<Vec<Candidate>>) -> Result<CandidateSet, RetrievalError> {
    let mut set = CandidateSet::default();
    for candidates in route_outputs {
        for c in candidates {
            match set.by_id.get_mut(&c.strategy_id) {
                None => {
                    set.by_id.insert(c.strategy_id.clone(), c);
                }
                Some(existing) => {
                    if existing.source != c.source {
                        return Err(RetrievalError::SourceConflict(c.strategy_id));
                    }
                    existing.routes.extend(c.routes.iter().copied());
                    existing.provenance.extend(c.provenance);
                }
            }
        }
    }
    Ok(set)
}

/// Everything `retrieve` reads. All stores are immutable; retrieval is a
/// pure function of (stores, config, query embedding).
#[derive(Debug, Clone, Copy)]
pub struct RetrievalStores<'a> {
    pub graph: &'a HeteroGraph,
    pub node_embeddings: &'a NodeEmbeddings,
    /// Sentence embeddings of the train problems in the graph (the kNN
    /// search space).
    pub train_problem_embeddings: &'a EmbeddingTable,
    /// Sentence embeddings of strategy nodes, keyed by node id.
    pub strategy_embeddings: &'a EmbeddingTable,
    pub scores: &'a ExecScoreStore,
    pub retention: &'a RetentionMap,
    pub predictor: &'a PredictorParams,
}

/// Retrieval configuration; defaults follow the fixed protocol (top-5
/// neighborhood, temperature 0.1, trigger and guidance budget of 5,
/// effectiveness threshold 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub routes_enabled: BTreeSet<Route>,
    pub neighbor_k: usize,
    pub neighbor_temperature: f64,
    pub trigger_min: usize,
    pub max_guidance: usize,
    pub delta: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            routes_enabled: BTreeSet::from([Route::A, Route::B, Route::C]),
            neighbor_k: 5,
            neighbor_temperature: 0.1,
            trigger_min: 5,
            max_guidance: 5,
            delta: 0.5,
        }
    }
}

/// A retrieved, ranked guidance strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub strategy_id: String,
    pub text: String,
    pub source: Source,
    pub routes: BTreeSet<Route>,
    pub score: f64,
    pub provenance: Vec<Provenance>,
}

/// Transferred graph representation for a strategy that is not a graph
/// node: the softmax-weighted sum of the graph embeddings of its nearest
/// strategy nodes by sentence-embedding similarity (the same transfer
/// construction used for unseen problems).
pub fn strategy_representation(
    s_embedding: &EmbeddingVector,
    node_strategy_sentences: &EmbeddingTable,
    node_embeddings: &NodeEmbeddings,
    k: usize,
    temperature: f64,
) -> Result<Vec<f64>, RetrievalError> {
    let ranked = embedding::knn(s_embedding, node_strategy_sentences, k)?;
    let (ids, similarities): (Vec<String>, Vec<f64>) = ranked.into_iter().unzip();
    let weights = embedding::softmax_weights(&similarities, temperature)?;
    let mut h_s = alloc::vec![0.0; crate::encoder::HIDDEN_DIM];
    for (sid, w) in ids.iter().zip(weights.iter()) {
        let h = node_embeddings
            .get(&NodeRef::strategy(sid.clone()))
            .ok_or_else(|| RetrievalError::MissingEmbedding(sid.clone()))?;
        crate::linalg::axpy(&mut h_s, h, *w);
    }
    Ok(h_s)
}

/// Run the neighborhood construction and all enabled routes, returning the
/// merged (unranked) candidate pool alongside the transferred `h_x`.
pub fn gather_candidates(
    x_embedding: &EmbeddingVector,
    stores: &RetrievalStores,
    config: &RetrievalConfig,
) -> Result<(Neighborhood, Vec<f64>, CandidateSet), RetrievalError> {
    if config.neighbor_k == 0 {
        return Err(RetrievalError::InvalidConfig("neighbor_k must be at least 1"));
    }
    if stores.train_problem_embeddings.is_empty() {
        return Err(RetrievalError::MissingArtifact("train problem embeddings"));
    }
    if stores.node_embeddings.is_empty() {
        return Err(RetrievalError::MissingArtifact("graph node embeddings"));
    }

    let neighborhood = build_neighborhood(
        x_embedding,
        stores.train_problem_embeddings,
        config.neighbor_k,
        config.neighbor_temperature,
    )?;
    let h_x = problem_representation(&neighborhood, stores.node_embeddings)?;

    let a = if config.routes_enabled.contains(&Route::A) {
        route_a(&h_x, stores.graph, stores.node_embeddings, stores.retention)?
    } else {
        Vec::new()
    };
    let b = if config.routes_enabled.contains(&Route::B) {
        route_b(&neighborhood, stores.scores, stores.graph, config.delta)
    } else {
        Vec::new()
    };
    let ab = merge(alloc::vec![a, b])?;
    let c = if config.routes_enabled.contains(&Route::C) {
        route_c(
            &h_x,
            stores.graph,
            stores.node_embeddings,
            &ab,
            config.trigger_min,
            ROUTE_C_LIMIT,
        )?
    } else {
        Vec::new()
    };
    debug_assert!(c.len() <= ROUTE_C_LIMIT);
    let merged = merge(alloc::vec![ab.by_id.into_values().collect(), c])?;
    Ok((neighborhood, h_x, merged))
}

/// End-to-end retrieval for one query problem embedding.
///
/// Neighborhood → transferred `h_x` → enabled routes → merge → features →
/// calibrated ranking → at most `max_guidance` strategies. Deterministic
/// given stores and config.
pub fn retrieve(
    x_embedding: &EmbeddingVector,
    stores: &RetrievalStores,
    config: &RetrievalConfig,
) -> Result<Vec<RankedStrategy>, RetrievalError> {
    if config.max_guidance == 0 {
        return Err(RetrievalError::InvalidConfig("budget must be at least 1"));
    }
    let (_, h_x, merged) = gather_candidates(x_embedding, stores, config)?;
    if merged.is_empty() {
        return Err(RetrievalError::EmptyCandidates);
    }

    let mut items: Vec<(String, FeatureVector)> = Vec::with_capacity(merged.len());
    for candidate in merged.iter() {
        let s_sentence = stores
            .strategy_embeddings
            .get(&candidate.strategy_id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(candidate.strategy_id.clone()))?;
        let h_s = strategy_embedding(stores.node_embeddings, &candidate.strategy_id)?;
        let phi = executability::build_features(
            x_embedding.values(),
            s_sentence.values(),
            &h_x,
            h_s,
            [
                candidate.routes.contains(&Route::A),
                candidate.routes.contains(&Route::B),
                candidate.routes.contains(&Route::C),
            ],
            candidate.source,
        )?;
        items.push((candidate.strategy_id.clone(), phi));
    }
    let ranked = executability::rank_scored(items, stores.predictor, config.max_guidance)?;
    debug_assert!(ranked.len() <= config.max_guidance);

    let mut out = Vec::with_capacity(ranked.len());
    for (sid, score) in ranked {
        let candidate = merged.get(&sid).expect("ranked id came from the set");
        let meta = stores.graph.strategy_meta(&sid).expect("candidate has meta");
        debug_assert!(!candidate.routes.is_empty());
        out.push(RankedStrategy {
            strategy_id: sid,
            text: meta.text.clone(),
            source: candidate.source,
            routes: candidate.routes.clone(),
            score,
            provenance: candidate.provenance.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Origin, Problem, Split, StrategyInstance, Subject};
    use crate::embedding::{TableKind, EMBEDDING_DIM};
    use crate::encoder::HIDDEN_DIM;
    use crate::graph::{build_graph, source_aware_retention};
    use crate::taxonomy::Taxonomy;
    use alloc::format;
    use alloc::vec;

    /// Fixture: `n_problems` train problems; per problem one human
    /// pigeonhole strategy and one model bijection strategy. Node
    /// embeddings are planted so pigeonhole strategies align with axis 0
    /// and bijection with axis 1.
    struct Fixture {
        graph: HeteroGraph,
        node_embeddings: NodeEmbeddings,
        problem_sentences: EmbeddingTable,
        strategy_sentences: EmbeddingTable,
    }

    fn axis(dim: usize, i: usize, value: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = value;
        v
    }

    fn fixture(n_problems: usize) -> Fixture {
        let problems: Vec<Problem> = (0..n_problems)
            .map(|i| Problem {
                id: format!("q{i:02}"),
                text: format!("problem {i}"),
                subject: Subject::Combinatorics,
                difficulty: 3,
                origin: Origin::Synthetic,
                split: Some(Split::Train),
            })
            .collect();
        let mut strategies = Vec::new();
        for i in 0..n_problems {
            strategies.push(StrategyInstance {
                id: format!("h{i:02}"),
                problem_id: format!("q{i:02}"),
                source: Source::Human,
                text: format!("pigeonhole way {i}"),
                template_id: "pigeonhole".into(),
            });
            strategies.push(StrategyInstance {
                id: format!("m{i:02}"),
                problem_id: format!("q{i:02}"),
                source: Source::Model,
                text: format!("bijection way {i}"),
                template_id: "bijection".into(),
            });
        }
        let problem_sentences = EmbeddingTable::from_entries(
            TableKind::Problem,
            (0..n_problems).map(|i| {
                let mut v = axis(EMBEDDING_DIM, 0, 1.0);
                v[10 + i] = 0.05 * (i + 1) as f64;
                (format!("q{i:02}"), v)
            }),
        )
        .unwrap();
        let strategy_sentences = EmbeddingTable::from_entries(
            TableKind::Strategy,
            (0..n_problems).flat_map(|i| {
                [
                    (format!("h{i:02}"), axis(EMBEDDING_DIM, 0, 1.0)),
                    (format!("m{i:02}"), axis(EMBEDDING_DIM, 1, 1.0)),
                ]
            }),
        )
        .unwrap();
        let corpus = Corpus::new(
            problems,
            vec![],
            strategies,
            vec![],
            vec![],
            Taxonomy::canonical(),
        )
        .unwrap();
        let graph = build_graph(&corpus, &problem_sentences, &strategy_sentences, &Taxonomy::canonical())
            .unwrap();

        // Planted 128-dim node embeddings: problems near axis 0; pigeonhole
        // strategies on axis 0 with a small per-index tilt, bijection on
        // axis 1; categories on their template axes.
        let mut entries = BTreeMap::new();
        for node in graph.nodes() {
            let v = match node.kind {
                crate::graph::NodeKind::Problem => axis(HIDDEN_DIM, 0, 1.0),
                crate::graph::NodeKind::Strategy => {
                    let idx: usize = node.id[1..].parse().unwrap();
                    if node.id.starts_with('h') {
                        let mut v = axis(HIDDEN_DIM, 0, 1.0);
                        v[2] = 0.01 * idx as f64;
                        v
                    } else {
                        let mut v = axis(HIDDEN_DIM, 1, 1.0);
                        v[2] = 0.01 * idx as f64;
                        v
                    }
                }
                crate::graph::NodeKind::Category => {
                    if node.id == "pigeonhole" {
                        axis(HIDDEN_DIM, 0, 1.0)
                    } else {
                        axis(HIDDEN_DIM, 1, 1.0)
                    }
                }
            };
            entries.insert(node.clone(), v);
        }
        let node_embeddings = NodeEmbeddings::new(&graph, entries).unwrap();
        Fixture {
            graph,
            node_embeddings,
            problem_sentences,
            strategy_sentences,
        }
    }

    fn h_x_axis0() -> Vec<f64> {
        axis(HIDDEN_DIM, 0, 1.0)
    }

    #[test]
    fn problem_representation_single_neighbor_is_that_embedding() {
        let f = fixture(2);
        let n = Neighborhood {
            problem_ids: vec!["q00".into()],
            similarities: vec![0.9],
            weights: vec![1.0],
        };
        let h = problem_representation(&n, &f.node_embeddings).unwrap();
        let expected = f.node_embeddings.get(&NodeRef::problem("q00")).unwrap();
        assert_eq!(&h, expected);
    }

    #[test]
    fn problem_representation_uniform_weights_is_the_mean() {
        let f = fixture(2);
        let n = Neighborhood {
            problem_ids: vec!["q00".into(), "q01".into()],
            similarities: vec![0.5, 0.5],
            weights: vec![0.5, 0.5],
        };
        let h = problem_representation(&n, &f.node_embeddings).unwrap();
        let a = f.node_embeddings.get(&NodeRef::problem("q00")).unwrap();
        let b = f.node_embeddings.get(&NodeRef::problem("q01")).unwrap();
        for d in 0..HIDDEN_DIM {
            assert!((h[d] - (a[d] + b[d]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn problem_representation_cold_temperature_tracks_nearest() {
        // Similarity gap 0.2 at temperature 1e-3: the top neighbor holds
        // essentially all the weight.
        let f = fixture(2);
        let weights = embedding::softmax_weights(&[0.9, 0.7], 1e-3).unwrap();
        let n = Neighborhood {
            problem_ids: vec!["q00".into(), "q01".into()],
            similarities: vec![0.9, 0.7],
            weights,
        };
        let h = problem_representation(&n, &f.node_embeddings).unwrap();
        let nearest = f.node_embeddings.get(&NodeRef::problem("q00")).unwrap();
        let diff: f64 = h
            .iter()
            .zip(nearest.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .max(1e-30);
        let rel = crate::num::sqrt(diff) / crate::linalg::norm(nearest);
        assert!(rel < 1e-2, "relative distance {rel}");
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let f = fixture(1);
        let n = Neighborhood {
            problem_ids: vec![],
            similarities: vec![],
            weights: vec![],
        };
        assert_eq!(
            problem_representation(&n, &f.node_embeddings).unwrap_err(),
            RetrievalError::EmptyNeighborhood
        );
    }

    #[test]
    fn route_a_single_category_clamps_top_two() {
        let f = fixture(1);
        // Retention keeps everything by default (no scores).
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let out = route_a(&h_x_axis0(), &f.graph, &f.node_embeddings, &retention).unwrap();
        // Both categories exist here; with one problem each category holds
        // one strategy, so at most 2 candidates come back.
        assert!(out.len() <= ROUTE_A_CATEGORIES * ROUTE_A_PER_CATEGORY);
        assert!(out.iter().all(|c| c.routes.contains(&Route::A)));
    }

    #[test]
    fn route_a_caps_at_ten_per_category() {
        // 25 retained pigeonhole strategies: exactly 10 selected for that
        // category.
        let f = fixture(25);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let out = route_a(&h_x_axis0(), &f.graph, &f.node_embeddings, &retention).unwrap();
        let pigeonhole: Vec<&Candidate> = out
            .iter()
            .filter(|c| {
                c.provenance.iter().any(|p| matches!(
                    p,
                    Provenance::CategoryMatch { category_id, .. } if category_id == "pigeonhole"
                ))
            })
            .collect();
        assert_eq!(pigeonhole.len(), ROUTE_A_PER_CATEGORY);
        assert!(out.len() <= 20);
    }

    #[test]
    fn route_a_respects_retention() {
        let f = fixture(5);
        // Score pigeonhole human high and bijection model low with full
        // coverage on the pigeonhole category only for humans; build a map
        // where bijection retains only human (which has no members there),
        // by scoring both sources on the bijection category.
        let mut scores = BTreeMap::new();
        for i in 0..5 {
            scores.insert(format!("h{i:02}"), 0.9);
            scores.insert(format!("m{i:02}"), 0.2);
        }
        // All bijection members are model-sourced; coverage for human on
        // bijection is 0, so retention keeps both there. The pigeonhole
        // category is all-human, same story. Build a synthetic retention
        // denying model on bijection instead.
        let retention = {
            use crate::graph::RetentionMap;
            let mut map = RetentionMap::default();
            let _ = &mut map;
            // RetentionMap is opaque; drive the rule through real scores on
            // a mixed-source category instead.
            retention_from(&f.graph, &scores)
        };
        let out = route_a(&h_x_axis0(), &f.graph, &f.node_embeddings, &retention).unwrap();
        // Default-both retention (per-category single-source coverage) means
        // no candidate loss; every candidate's source must be retained.
        for c in &out {
            let meta = f.graph.strategy_meta(&c.strategy_id).unwrap();
            assert!(retention
                .retained(&meta.template_id, &meta.template_id)
                .contains(&meta.source));
        }
        fn retention_from(
            graph: &HeteroGraph,
            scores: &BTreeMap<String, f64>,
        ) -> crate::graph::RetentionMap {
            source_aware_retention(graph, scores, 3)
        }
    }

    fn score_store(f: &Fixture, entries: &[(&str, &str, f64)]) -> ExecScoreStore {
        let _ = f;
        let mut s = ExecScoreStore::default();
        for (p, sid, v) in entries {
            s.insert(*p, *sid, *v);
        }
        s
    }

    #[test]
    fn route_b_threshold_includes_and_excludes() {
        let f = fixture(3);
        let scores = score_store(
            &f,
            &[("q00", "h00", 0.8), ("q00", "m00", 0.2), ("q01", "h01", 0.6)],
        );
        let n = Neighborhood {
            problem_ids: vec!["q00".into(), "q01".into()],
            similarities: vec![0.9, 0.8],
            weights: vec![0.6, 0.4],
        };
        let out = route_b(&n, &scores, &f.graph, 0.5);
        let ids: BTreeSet<&str> = out.iter().map(|c| c.strategy_id.as_str()).collect();
        assert_eq!(ids, BTreeSet::from(["h00", "h01"]));
        assert!(out.iter().all(|c| c.routes.contains(&Route::B)));
    }

    #[test]
    fn route_b_empty_without_trials() {
        let f = fixture(2);
        let n = Neighborhood {
            problem_ids: vec!["q00".into()],
            similarities: vec![0.9],
            weights: vec![1.0],
        };
        assert!(route_b(&n, &ExecScoreStore::default(), &f.graph, 0.5).is_empty());
    }

    #[test]
    fn route_c_skips_when_pool_is_full() {
        let f = fixture(7);
        let current = merge(vec![(0..7)
            .map(|i| Candidate {
                strategy_id: format!("h{i:02}"),
                source: Source::Human,
                routes: BTreeSet::from([Route::A]),
                provenance: vec![],
            })
            .collect()])
        .unwrap();
        assert_eq!(current.len(), 7);
        let out = route_c(&h_x_axis0(), &f.graph, &f.node_embeddings, &current, 5, 20).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn route_c_fills_up_to_limit_excluding_existing() {
        let f = fixture(15);
        let current = merge(vec![vec![
            Candidate {
                strategy_id: "h00".into(),
                source: Source::Human,
                routes: BTreeSet::from([Route::A]),
                provenance: vec![],
            },
            Candidate {
                strategy_id: "m00".into(),
                source: Source::Model,
                routes: BTreeSet::from([Route::B]),
                provenance: vec![],
            },
        ]])
        .unwrap();
        let out = route_c(&h_x_axis0(), &f.graph, &f.node_embeddings, &current, 5, 20).unwrap();
        assert!(out.len() <= 20);
        assert!(out.iter().all(|c| c.strategy_id != "h00" && c.strategy_id != "m00"));
        // 30 strategies exist, 2 excluded, limit 20.
        assert_eq!(out.len(), 20);
    }

    #[test]
    fn merge_unions_routes_and_concatenates_provenance() {
        let a = Candidate {
            strategy_id: "s".into(),
            source: Source::Human,
            routes: BTreeSet::from([Route::A]),
            provenance: vec![Provenance::CategoryMatch {
                category_id: "pigeonhole".into(),
                similarity: 0.9,
            }],
        };
        let c = Candidate {
            strategy_id: "s".into(),
            source: Source::Human,
            routes: BTreeSet::from([Route::C]),
            provenance: vec![Provenance::SemanticFallback { similarity: 0.8 }],
        };
        let merged = merge(vec![vec![a], vec![c]]).unwrap();
        assert_eq!(merged.len(), 1);
        let m = merged.get("s").unwrap();
        assert_eq!(m.routes, BTreeSet::from([Route::A, Route::C]));
        assert_eq!(m.provenance.len(), 2);
    }

    #[test]
    fn merge_disjoint_lists_unions() {
        let mk = |id: &str| Candidate {
            strategy_id: id.into(),
            source: Source::Model,
            routes: BTreeSet::from([Route::B]),
            provenance: vec![],
        };
        let merged = merge(vec![
            vec![mk("a"), mk("b"), mk("c")],
            vec![mk("d"), mk("e"), mk("f"), mk("g")],
        ])
        .unwrap();
        assert_eq!(merged.len(), 7);
        assert!(merge(vec![]).unwrap().is_empty());
    }

    #[test]
    fn merge_conflicting_sources_is_data_corruption() {
        let a = Candidate {
            strategy_id: "s".into(),
            source: Source::Human,
            routes: BTreeSet::from([Route::A]),
            provenance: vec![],
        };
        let b = Candidate {
            strategy_id: "s".into(),
            source: Source::Model,
            routes: BTreeSet::from([Route::B]),
            provenance: vec![],
        };
        assert_eq!(
            merge(vec![vec![a], vec![b]]).unwrap_err(),
            RetrievalError::SourceConflict("s".into())
        );
    }

    fn stores<'a>(f: &'a Fixture, retention: &'a RetentionMap, scores: &'a ExecScoreStore, predictor: &'a PredictorParams) -> RetrievalStores<'a> {
        RetrievalStores {
            graph: &f.graph,
            node_embeddings: &f.node_embeddings,
            train_problem_embeddings: &f.problem_sentences,
            strategy_embeddings: &f.strategy_sentences,
            scores,
            retention,
            predictor,
        }
    }

    fn query(f: &Fixture) -> EmbeddingVector {
        f.problem_sentences.get("q00").unwrap().clone()
    }

    #[test]
    fn retrieve_returns_at_most_five_with_provenance() {
        let f = fixture(8);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let scores = score_store(&f, &[("q00", "h00", 0.8)]);
        let predictor = PredictorParams::default();
        let s = stores(&f, &retention, &scores, &predictor);
        let out = retrieve(&query(&f), &s, &RetrievalConfig::default()).unwrap();
        assert!(!out.is_empty() && out.len() <= 5);
        for r in &out {
            assert!(!r.routes.is_empty());
            assert!(!r.text.is_empty());
        }
    }

    #[test]
    fn retrieve_is_deterministic() {
        let f = fixture(8);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let scores = score_store(&f, &[("q00", "h00", 0.8), ("q01", "m01", 0.7)]);
        let predictor = PredictorParams::default();
        let s = stores(&f, &retention, &scores, &predictor);
        let a = retrieve(&query(&f), &s, &RetrievalConfig::default()).unwrap();
        let b = retrieve(&query(&f), &s, &RetrievalConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn route_c_fires_iff_pool_is_short() {
        let f = fixture(8);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let empty_scores = ExecScoreStore::default();
        let predictor = PredictorParams::default();

        // A+B produce plenty (A gives up to 20 here): C must not fire.
        let s = stores(&f, &retention, &empty_scores, &predictor);
        let full = retrieve(&query(&f), &s, &RetrievalConfig::default()).unwrap();
        assert!(full.iter().all(|r| !r.routes.contains(&Route::C)));

        // Disable A and B: the pool is short, C fires.
        let config = RetrievalConfig {
            routes_enabled: BTreeSet::from([Route::C]),
            ..RetrievalConfig::default()
        };
        let only_c = retrieve(&query(&f), &s, &config).unwrap();
        assert!(only_c.iter().all(|r| r.routes == BTreeSet::from([Route::C])));
    }

    #[test]
    fn disabling_a_route_never_grows_the_pool() {
        let f = fixture(6);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let scores = score_store(&f, &[("q00", "h00", 0.9), ("q01", "h01", 0.8)]);
        let predictor = PredictorParams::default();
        let s = stores(&f, &retention, &scores, &predictor);

        let pool_size = |routes: BTreeSet<Route>| {
            let config = RetrievalConfig {
                routes_enabled: routes,
                // Keep C quiet so the comparison isolates A and B.
                trigger_min: 0,
                ..RetrievalConfig::default()
            };
            let neighborhood = build_neighborhood(
                &query(&f),
                s.train_problem_embeddings,
                config.neighbor_k,
                config.neighbor_temperature,
            )
            .unwrap();
            let h_x = problem_representation(&neighborhood, s.node_embeddings).unwrap();
            let a = if config.routes_enabled.contains(&Route::A) {
                route_a(&h_x, s.graph, s.node_embeddings, s.retention).unwrap()
            } else {
                vec![]
            };
            let b = if config.routes_enabled.contains(&Route::B) {
                route_b(&neighborhood, s.scores, s.graph, config.delta)
            } else {
                vec![]
            };
            merge(vec![a, b]).unwrap().len()
        };

        let all = pool_size(BTreeSet::from([Route::A, Route::B]));
        let no_a = pool_size(BTreeSet::from([Route::B]));
        let no_b = pool_size(BTreeSet::from([Route::A]));
        assert!(no_a <= all);
        assert!(no_b <= all);
    }

    #[test]
    fn retrieve_without_artifacts_names_the_missing_piece() {
        let f = fixture(2);
        let retention = source_aware_retention(&f.graph, &BTreeMap::new(), 3);
        let scores = ExecScoreStore::default();
        let predictor = PredictorParams::default();
        let mut s = stores(&f, &retention, &scores, &predictor);
        let empty = EmbeddingTable::new(TableKind::Problem);
        s.train_problem_embeddings = &empty;
        assert_eq!(
            retrieve(&query(&f), &s, &RetrievalConfig::default()).unwrap_err(),
            RetrievalError::MissingArtifact("train problem embeddings")
        );
    }
}
