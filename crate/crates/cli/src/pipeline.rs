//! Shared pipeline assembly: pooling trial outcomes into node-level
//! scores, deriving supervision, building predictor samples with route
//! flags, wiring retrieval stores, and the planted-truth evaluation loop.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};

use stratex_core::corpus::{Corpus, Source, Split};
use stratex_core::embedding::{EmbeddingTable, EmbeddingVector};
use stratex_core::encoder::{self, Mode, NodeEmbeddings, SupervisionSet, TrainConfig};
use stratex_core::executability::{
    build_features, calibrate, fit, label, posterior_mean, BetaPrior, ExecutabilityScore,
    FeatureVector, FitConfig, Label, PredictorParams,
};
use stratex_core::graph::{build_graph, source_aware_retention, HeteroGraph, NodeRef, RetentionMap};
use stratex_core::retrieval::{
    gather_candidates, retrieve, strategy_representation, ExecScoreStore, RankedStrategy,
    RetrievalStores, Route,
};
use stratex_core::rng;

use crate::config::Config;

/// Resolve the (model, protocol) pair a predictor is scoped to. With no
/// explicit choice the corpus must contain exactly one pair.
pub fn select_model_protocol(
    corpus: &Corpus,
    model_id: Option<&str>,
    protocol_id: Option<&str>,
) -> Result<(String, String)> {
    let pairs: BTreeSet<(&str, &str)> = corpus
        .trials()
        .iter()
        .map(|t| (t.model_id.as_str(), t.protocol_id.as_str()))
        .collect();
    match (model_id, protocol_id) {
        (Some(m), Some(p)) => Ok((m.to_string(), p.to_string())),
        (None, None) => {
            if pairs.len() > 1 {
                bail!(
                    "corpus contains {} (model, protocol) pairs; pass --model-id and --protocol-id",
                    pairs.len()
                );
            }
            let (m, p) = pairs
                .into_iter()
                .next()
                .ok_or_else(|| anyhow!("corpus contains no trial records"))?;
            Ok((m.to_string(), p.to_string()))
        }
        _ => bail!("--model-id and --protocol-id must be given together"),
    }
}

/// Pool trial outcomes per (problem, strategy node) and score each pool
/// with the Beta–Binomial posterior mean. Instances merged into one node
/// pool their outcomes.
pub fn node_level_scores(
    corpus: &Corpus,
    instance_map: &BTreeMap<String, String>,
    prior: &BetaPrior,
    model_id: &str,
    protocol_id: &str,
) -> Result<Vec<ExecutabilityScore>> {
    let mut pooled: BTreeMap<(String, String), Vec<u8>> = BTreeMap::new();
    for t in corpus.trials() {
        if t.model_id != model_id || t.protocol_id != protocol_id {
            continue;
        }
        let Some(node) = instance_map.get(&t.strategy_id) else {
            continue;
        };
        pooled
            .entry((t.problem_id.clone(), node.clone()))
            .or_default()
            .extend_from_slice(&t.outcomes);
    }
    let mut scores = Vec::with_capacity(pooled.len());
    for ((problem_id, strategy_id), outcomes) in pooled {
        let posterior = posterior_mean(&outcomes, prior)
            .map_err(|e| anyhow!("scoring ({problem_id}, {strategy_id}): {e}"))?;
        scores.push(ExecutabilityScore {
            problem_id,
            strategy_id,
            posterior_mean: posterior,
            trials_used: outcomes.len(),
        });
    }
    Ok(scores)
}

pub fn score_store(scores: &[ExecutabilityScore]) -> ExecScoreStore {
    let mut store = ExecScoreStore::default();
    for s in scores {
        store.insert(s.problem_id.clone(), s.strategy_id.clone(), s.posterior_mean);
    }
    store
}

/// Threshold node-level scores into the contrastive supervision set;
/// ambiguous pairs are dropped.
pub fn supervision_from_scores(
    scores: &[ExecutabilityScore],
    delta: f64,
    delta_neg: f64,
) -> Result<SupervisionSet> {
    let mut positives = Vec::new();
    let mut negatives: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in scores {
        match label(s.posterior_mean, delta, delta_neg).map_err(|e| anyhow!("{e}"))? {
            Label::Positive => positives.push((s.problem_id.clone(), s.strategy_id.clone())),
            Label::Negative => negatives
                .entry(s.problem_id.clone())
                .or_default()
                .push(s.strategy_id.clone()),
            Label::Ambiguous => {}
        }
    }
    SupervisionSet::new(positives, negatives).map_err(|e| anyhow!("{e}"))
}

/// Sentence-embedding table restricted to graph problem nodes (the kNN
/// search space for retrieval).
pub fn train_problem_table(graph: &HeteroGraph, problems: &EmbeddingTable) -> EmbeddingTable {
    let ids: Vec<&str> = graph
        .nodes()
        .iter()
        .filter(|n| n.kind == stratex_core::graph::NodeKind::Problem)
        .map(|n| n.id.as_str())
        .collect();
    problems.restricted_to(ids)
}

/// Sentence-embedding table keyed by strategy node id (node ids are the
/// representative instance ids, so this is a restriction).
pub fn strategy_node_table(graph: &HeteroGraph, strategies: &EmbeddingTable) -> EmbeddingTable {
    let ids: Vec<&str> = graph.strategy_nodes().map(|(id, _)| id.as_str()).collect();
    strategies.restricted_to(ids)
}

/// Everything retrieval needs, owned. Built once, then read-only.
pub struct Stores {
    pub graph: HeteroGraph,
    pub node_embeddings: NodeEmbeddings,
    pub scores: Vec<ExecutabilityScore>,
    pub score_store: ExecScoreStore,
    pub retention: RetentionMap,
    pub train_problems: EmbeddingTable,
    pub strategy_nodes: EmbeddingTable,
    pub predictor: PredictorParams,
}

impl Stores {
    pub fn retrieval_stores(&self) -> RetrievalStores<'_> {
        RetrievalStores {
            graph: &self.graph,
            node_embeddings: &self.node_embeddings,
            train_problem_embeddings: &self.train_problems,
            strategy_embeddings: &self.strategy_nodes,
            scores: &self.score_store,
            retention: &self.retention,
            predictor: &self.predictor,
        }
    }
}

fn route_flags(candidates: &stratex_core::retrieval::CandidateSet, node_id: &str) -> [bool; 3] {
    candidates.get(node_id).map_or([false; 3], |c| {
        [
            c.routes.contains(&Route::A),
            c.routes.contains(&Route::B),
            c.routes.contains(&Route::C),
        ]
    })
}

/// Trial-level predictor samples over one split.
///
/// Train problems use their own graph embedding for `h_x`; validation and
/// test problems use the transferred representation, and their strategies
/// (absent from the graph) get a transferred graph embedding from their
/// nearest strategy nodes. Route flags record how the strategy would be
/// retrieved for that problem; one sample per decoding trial.
pub fn build_samples(
    corpus: &Corpus,
    stores: &Stores,
    problems: &EmbeddingTable,
    strategies: &EmbeddingTable,
    config: &Config,
    split: Split,
    model_id: &str,
    protocol_id: &str,
) -> Result<Vec<(FeatureVector, u8)>> {
    let retrieval_config = config.retrieval();
    let rstores = stores.retrieval_stores();
    let mut samples = Vec::new();

    let mut by_problem: BTreeMap<&str, Vec<&stratex_core::corpus::TrialRecord>> = BTreeMap::new();
    for t in corpus.trials() {
        if t.model_id != model_id || t.protocol_id != protocol_id {
            continue;
        }
        let p = corpus
            .problem(&t.problem_id)
            .ok_or_else(|| anyhow!("trial references unknown problem {}", t.problem_id))?;
        if p.split == Some(split) {
            by_problem.entry(t.problem_id.as_str()).or_default().push(t);
        }
    }

    for (pid, trials) in by_problem {
        let x_sentence = problems
            .require(pid)
            .map_err(|e| anyhow!("problem embeddings: {e}"))?;
        let (_, h_x_transferred, candidates) =
            gather_candidates(x_sentence, &rstores, &retrieval_config)
                .map_err(|e| anyhow!("candidate routes for {pid}: {e}"))?;
        let problem_node = NodeRef::problem(pid);
        let h_x: Vec<f64> = match stores.node_embeddings.get(&problem_node) {
            Some(own) => own.clone(),
            None => h_x_transferred,
        };

        for t in trials {
            let node = stores.graph.node_of_instance(&t.strategy_id).cloned();
            let (s_sentence, h_s, flags, source) = match node {
                Some(node_id) => {
                    let meta = stores
                        .graph
                        .strategy_meta(&node_id)
                        .expect("node has meta");
                    let s_sent = stores
                        .strategy_nodes
                        .require(&node_id)
                        .map_err(|e| anyhow!("strategy embeddings: {e}"))?;
                    let h_s = stores
                        .node_embeddings
                        .get(&NodeRef::strategy(node_id.clone()))
                        .ok_or_else(|| anyhow!("missing node embedding for {node_id}"))?;
                    (
                        s_sent.values().to_vec(),
                        h_s.clone(),
                        route_flags(&candidates, &node_id),
                        meta.source,
                    )
                }
                None => {
                    // Unseen strategy: transfer a graph embedding from its
                    // nearest strategy nodes by sentence similarity.
                    let instance = corpus
                        .strategy(&t.strategy_id)
                        .ok_or_else(|| anyhow!("unknown strategy {}", t.strategy_id))?;
                    let s_sent = strategies
                        .require(&t.strategy_id)
                        .map_err(|e| anyhow!("strategy embeddings: {e}"))?;
                    let h_s = strategy_representation(
                        s_sent,
                        &stores.strategy_nodes,
                        &stores.node_embeddings,
                        config.strategy_knn_k,
                        config.neighbor_temperature,
                    )
                    .map_err(|e| anyhow!("transferring strategy embedding: {e}"))?;
                    (s_sent.values().to_vec(), h_s, [false; 3], instance.source)
                }
            };
            let phi = build_features(
                x_sentence.values(),
                &s_sentence,
                &h_x,
                &h_s,
                flags,
                source,
            )
            .map_err(|e| anyhow!("features for ({pid}, {}): {e}", t.strategy_id))?;
            for &y in &t.outcomes {
                samples.push((phi, y));
            }
        }
    }
    Ok(samples)
}

/// Full in-memory pipeline: graph → scores → supervision → encoder →
/// retention → predictor fit → calibration. Returns the assembled stores
/// plus the encoder loss curve.
pub fn run_pipeline(
    corpus: &Corpus,
    problems: &EmbeddingTable,
    strategies: &EmbeddingTable,
    config: &Config,
    seed: u64,
) -> Result<(Stores, Vec<f64>)> {
    let (model_id, protocol_id) = select_model_protocol(corpus, None, None)?;
    let prior = BetaPrior::new(config.prior_alpha, config.prior_beta).map_err(|e| anyhow!("{e}"))?;

    let graph = build_graph(corpus, problems, strategies, corpus.taxonomy())
        .map_err(|e| anyhow!("building graph: {e}"))?;
    let scores = node_level_scores(corpus, graph.instance_map(), &prior, &model_id, &protocol_id)?;
    let supervision = supervision_from_scores(&scores, config.delta, config.delta_neg)?;

    let train_config = TrainConfig {
        epochs: config.epochs,
        lr: config.lr,
        batch: config.batch,
        tau: config.tau,
        negatives_k: config.negatives_k,
        seed,
    };
    let (params, losses) =
        encoder::train(&graph, &supervision, &train_config).map_err(|e| anyhow!("training: {e}"))?;
    let node_embeddings =
        encoder::forward(&graph, &params, Mode::Eval, 0).map_err(|e| anyhow!("forward: {e}"))?;

    let store = score_store(&scores);
    let retention = source_aware_retention(&graph, &store.node_means(), config.min_coverage);
    let train_problems = train_problem_table(&graph, problems);
    let strategy_nodes = strategy_node_table(&graph, strategies);

    let mut stores = Stores {
        graph,
        node_embeddings,
        scores,
        score_store: store,
        retention,
        train_problems,
        strategy_nodes,
        predictor: PredictorParams::default(),
    };

    let fit_samples = build_samples(
        corpus,
        &stores,
        problems,
        strategies,
        config,
        Split::Train,
        &model_id,
        &protocol_id,
    )?;
    let fit_config = FitConfig {
        max_iters: config.fit_max_iters,
        tol: config.fit_tol,
        lr: config.fit_lr,
    };
    let fitted =
        fit(&fit_samples, config.l2_lambda, &fit_config).map_err(|e| anyhow!("fitting: {e}"))?;
    stores.predictor = PredictorParams {
        theta: fitted.theta,
        l2_lambda: config.l2_lambda,
        calibration_temperature: 1.0,
    };

    let validation_samples = build_samples(
        corpus,
        &stores,
        problems,
        strategies,
        config,
        Split::Validation,
        &model_id,
        &protocol_id,
    )?;
    if !validation_samples.is_empty() {
        calibrate(&mut stores.predictor, &validation_samples)
            .map_err(|e| anyhow!("calibrating: {e}"))?;
    }

    Ok((stores, losses))
}

/// Per-probe evaluation outcome against the planted assignment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeOutcome {
    pub problem_id: String,
    pub hit: bool,
    pub semantic_only_hit: bool,
    pub random_hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub n_probes: usize,
    pub hit_rate: f64,
    pub semantic_only_hit_rate: f64,
    pub random_hit_rate: f64,
    pub per_probe: Vec<ProbeOutcome>,
}

const RANDOM_BASELINE_STREAM: u64 = 0x52414e44; // "RAND"

/// Probe every test-split problem: full retrieval, Route-C-only retrieval,
/// and a uniform-random top-5 baseline, each judged against the planted
/// executability oracle.
pub fn evaluate_probes(
    corpus: &Corpus,
    stores: &Stores,
    problems: &EmbeddingTable,
    config: &Config,
    seed: u64,
    is_executable: &dyn Fn(&str, &str, Source) -> bool,
) -> Result<EvalReport> {
    let rstores = stores.retrieval_stores();
    let full_config = config.retrieval();
    let semantic_only = stratex_core::retrieval::RetrievalConfig {
        routes_enabled: BTreeSet::from([Route::C]),
        ..config.retrieval()
    };
    let all_nodes: Vec<&String> = stores.graph.strategy_nodes().map(|(id, _)| id).collect();
    let mut random_stream = rng::substream(seed, RANDOM_BASELINE_STREAM);

    let hit_in = |ranked: &[RankedStrategy], pid: &str| -> bool {
        ranked.iter().any(|r| {
            let meta = stores.graph.strategy_meta(&r.strategy_id).expect("ranked has meta");
            is_executable(pid, &meta.template_id, meta.source)
        })
    };

    let mut per_probe = Vec::new();
    for p in corpus.problems_in_split(Split::Test) {
        let x: &EmbeddingVector = problems
            .require(&p.id)
            .map_err(|e| anyhow!("problem embeddings: {e}"))?;
        let ranked = retrieve(x, &rstores, &full_config)
            .map_err(|e| anyhow!("retrieving for {}: {e}", p.id))?;
        let ranked_c = retrieve(x, &rstores, &semantic_only)
            .map_err(|e| anyhow!("semantic-only retrieval for {}: {e}", p.id))?;

        let mut idx: Vec<usize> = (0..all_nodes.len()).collect();
        rng::shuffle(&mut idx, &mut random_stream);
        let random_hit = idx[..config.max_guidance.min(idx.len())].iter().any(|&i| {
            let meta = stores.graph.strategy_meta(all_nodes[i]).expect("node has meta");
            is_executable(&p.id, &meta.template_id, meta.source)
        });

        per_probe.push(ProbeOutcome {
            problem_id: p.id.clone(),
            hit: hit_in(&ranked, &p.id),
            semantic_only_hit: hit_in(&ranked_c, &p.id),
            random_hit,
        });
    }

    let n = per_probe.len();
    if n == 0 {
        bail!("no test-split problems to probe");
    }
    let rate = |f: &dyn Fn(&ProbeOutcome) -> bool| {
        per_probe.iter().filter(|o| f(o)).count() as f64 / n as f64
    };
    Ok(EvalReport {
        n_probes: n,
        hit_rate: rate(&|o| o.hit),
        semantic_only_hit_rate: rate(&|o| o.semantic_only_hit),
        random_hit_rate: rate(&|o| o.random_hit),
        per_probe,
    })
}

/// Look up or remotely fetch the sentence embedding for a problem.
pub fn problem_embedding(
    problem_id: &str,
    problem_text: Option<&str>,
    problems: &EmbeddingTable,
    embed_endpoint: Option<&str>,
    batch_max: usize,
) -> Result<EmbeddingVector> {
    if let Some(v) = problems.get(problem_id) {
        return Ok(v.clone());
    }
    let (endpoint, text) = match (embed_endpoint, problem_text) {
        (Some(e), Some(t)) => (e, t),
        _ => bail!(
            "no stored embedding for `{problem_id}` and no --embed-endpoint to fetch one"
        ),
    };
    let client = crate::http::EmbeddingClient::new(endpoint, batch_max)?;
    let mut vectors = client.fetch_remote(&[text.to_string()])?;
    let vector = vectors.pop().ok_or_else(|| anyhow!("embedding service returned nothing"))?;
    EmbeddingVector::new(problem_id, vector).map_err(|e| anyhow!("{e}"))
}
