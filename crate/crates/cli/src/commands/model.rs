//! Model-building commands: build-graph, label, train-encoder,
//! fit-predictor, calibrate.

use std::path::Path;

use anyhow::{anyhow, Result};

use stratex_core::corpus::Split;
use stratex_core::embedding::TableKind;
use stratex_core::encoder::{self, Mode, TrainConfig};
use stratex_core::executability::{calibrate, fit, BetaPrior, FitConfig, PredictorParams};
use stratex_core::graph::source_aware_retention;

use crate::artifacts;
use crate::commands::{Ctx, Status};
use crate::pipeline::{
    build_samples, node_level_scores, score_store, select_model_protocol,
    strategy_node_table, supervision_from_scores, train_problem_table, Stores,
};

pub fn build_graph(
    ctx: &Ctx,
    corpus_path: &Path,
    problem_embeddings: &Path,
    strategy_embeddings: &Path,
) -> Result<Status> {
    let corpus = artifacts::load_corpus(corpus_path)?;
    let problems = artifacts::load_embeddings(problem_embeddings, TableKind::Problem)?;
    let strategies = artifacts::load_embeddings(strategy_embeddings, TableKind::Strategy)?;
    let graph = stratex_core::graph::build_graph(&corpus, &problems, &strategies, corpus.taxonomy())
        .map_err(|e| anyhow!("building graph: {e}"))?;

    let mut manifest = ctx.manifest(
        "build-graph",
        &[corpus_path, problem_embeddings, strategy_embeddings],
    )?;
    manifest.record_artifact("graph.json", artifacts::GRAPH_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("graph.json");
    artifacts::save_graph(&out, &graph, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}

pub fn label(
    ctx: &Ctx,
    corpus_path: &Path,
    graph_path: &Path,
    model_id: Option<&str>,
    protocol_id: Option<&str>,
) -> Result<Status> {
    let corpus = artifacts::load_corpus(corpus_path)?;
    let skeleton = artifacts::load_graph_skeleton(graph_path)?;
    let (model_id, protocol_id) = select_model_protocol(&corpus, model_id, protocol_id)?;
    let prior = BetaPrior::new(ctx.config.prior_alpha, ctx.config.prior_beta)
        .map_err(|e| anyhow!("{e}"))?;
    let scores = node_level_scores(&corpus, &skeleton.instance_map, &prior, &model_id, &protocol_id)?;

    let mut manifest = ctx.manifest("label", &[corpus_path, graph_path])?;
    manifest.record_artifact("scores.jsonl", artifacts::SCORES_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("scores.jsonl");
    artifacts::save_scores(&out, &scores, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}

pub fn train_encoder(
    ctx: &Ctx,
    graph_path: &Path,
    scores_path: &Path,
    problem_embeddings: &Path,
    strategy_embeddings: &Path,
) -> Result<Status> {
    let problems = artifacts::load_embeddings(problem_embeddings, TableKind::Problem)?;
    let strategies = artifacts::load_embeddings(strategy_embeddings, TableKind::Strategy)?;
    let graph = artifacts::load_graph(graph_path, &problems, &strategies)?;
    let scores = artifacts::load_scores(scores_path)?;
    let supervision = supervision_from_scores(&scores, ctx.config.delta, ctx.config.delta_neg)?;

    let train_config = TrainConfig {
        epochs: ctx.config.epochs,
        lr: ctx.config.lr,
        batch: ctx.config.batch,
        tau: ctx.config.tau,
        negatives_k: ctx.config.negatives_k,
        seed: ctx.seed,
    };
    let (params, losses) = encoder::train(&graph, &supervision, &train_config)
        .map_err(|e| anyhow!("training: {e}"))?;
    let embeddings = encoder::forward(&graph, &params, Mode::Eval, 0)
        .map_err(|e| anyhow!("forward: {e}"))?;

    let mut manifest = ctx.manifest(
        "train-encoder",
        &[graph_path, scores_path, problem_embeddings, strategy_embeddings],
    )?;
    manifest.record_artifact("encoder.json", artifacts::ENCODER_VERSION);
    manifest.record_artifact("losses.json", artifacts::LOSSES_VERSION);
    manifest.record_artifact("node-embeddings.json", artifacts::NODE_EMBEDDINGS_VERSION);
    ctx.ensure_out_dir()?;
    let encoder_out = ctx.out_path("encoder.json");
    let losses_out = ctx.out_path("losses.json");
    let embeddings_out = ctx.out_path("node-embeddings.json");
    artifacts::save_encoder(&encoder_out, &params, &manifest.manifest_id)?;
    artifacts::save_losses(&losses_out, &losses, &manifest.manifest_id)?;
    artifacts::save_node_embeddings(&embeddings_out, &embeddings, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(
        &manifest,
        vec![
            encoder_out.display().to_string(),
            losses_out.display().to_string(),
            embeddings_out.display().to_string(),
        ],
    ))
}

/// Load the stores every inference-side command shares.
#[allow(clippy::too_many_arguments)]
pub(crate) fn load_stores(
    ctx: &Ctx,
    graph_path: &Path,
    scores_path: &Path,
    node_embeddings_path: &Path,
    problem_embeddings: &Path,
    strategy_embeddings: &Path,
    predictor: PredictorParams,
) -> Result<(
    Stores,
    stratex_core::embedding::EmbeddingTable,
    stratex_core::embedding::EmbeddingTable,
)> {
    let problems = artifacts::load_embeddings(problem_embeddings, TableKind::Problem)?;
    let strategies = artifacts::load_embeddings(strategy_embeddings, TableKind::Strategy)?;
    let graph = artifacts::load_graph(graph_path, &problems, &strategies)?;
    let scores = artifacts::load_scores(scores_path)?;
    let node_embeddings = artifacts::load_node_embeddings(node_embeddings_path)?;
    let store = score_store(&scores);
    let retention = source_aware_retention(&graph, &store.node_means(), ctx.config.min_coverage);
    let train_problems = train_problem_table(&graph, &problems);
    let strategy_nodes = strategy_node_table(&graph, &strategies);
    Ok((
        Stores {
            graph,
            node_embeddings,
            scores,
            score_store: store,
            retention,
            train_problems,
            strategy_nodes,
            predictor,
        },
        problems,
        strategies,
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn fit_predictor(
    ctx: &Ctx,
    corpus_path: &Path,
    graph_path: &Path,
    scores_path: &Path,
    node_embeddings_path: &Path,
    problem_embeddings: &Path,
    strategy_embeddings: &Path,
    model_id: Option<&str>,
    protocol_id: Option<&str>,
) -> Result<Status> {
    let corpus = artifacts::load_corpus(corpus_path)?;
    let (model_id, protocol_id) = select_model_protocol(&corpus, model_id, protocol_id)?;
    let (stores, problems, strategies) = load_stores(
        ctx,
        graph_path,
        scores_path,
        node_embeddings_path,
        problem_embeddings,
        strategy_embeddings,
        PredictorParams::default(),
    )?;

    let samples = build_samples(
        &corpus,
        &stores,
        &problems,
        &strategies,
        &ctx.config,
        Split::Train,
        &model_id,
        &protocol_id,
    )?;
    let fit_config = FitConfig {
        max_iters: ctx.config.fit_max_iters,
        tol: ctx.config.fit_tol,
        lr: ctx.config.fit_lr,
    };
    let fitted = fit(&samples, ctx.config.l2_lambda, &fit_config)
        .map_err(|e| anyhow!("fitting predictor: {e}"))?;
    let params = PredictorParams {
        theta: fitted.theta,
        l2_lambda: ctx.config.l2_lambda,
        calibration_temperature: 1.0,
    };

    let mut manifest = ctx.manifest(
        "fit-predictor",
        &[
            corpus_path,
            graph_path,
            scores_path,
            node_embeddings_path,
            problem_embeddings,
            strategy_embeddings,
        ],
    )?;
    manifest.record_artifact("predictor.json", artifacts::PREDICTOR_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("predictor.json");
    artifacts::save_predictor(&out, &params, &model_id, &protocol_id, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_cmd(
    ctx: &Ctx,
    corpus_path: &Path,
    graph_path: &Path,
    scores_path: &Path,
    node_embeddings_path: &Path,
    problem_embeddings: &Path,
    strategy_embeddings: &Path,
    predictor_path: &Path,
) -> Result<Status> {
    let corpus = artifacts::load_corpus(corpus_path)?;
    let (params, model_id, protocol_id) = artifacts::load_predictor(predictor_path)?;
    let (stores, problems, strategies) = load_stores(
        ctx,
        graph_path,
        scores_path,
        node_embeddings_path,
        problem_embeddings,
        strategy_embeddings,
        params,
    )?;

    let samples = build_samples(
        &corpus,
        &stores,
        &problems,
        &strategies,
        &ctx.config,
        Split::Validation,
        &model_id,
        &protocol_id,
    )?;
    let mut params = stores.predictor;
    let tau = calibrate(&mut params, &samples).map_err(|e| anyhow!("calibrating: {e}"))?;

    let mut manifest = ctx.manifest(
        "calibrate",
        &[
            corpus_path,
            graph_path,
            scores_path,
            node_embeddings_path,
            problem_embeddings,
            strategy_embeddings,
            predictor_path,
        ],
    )?;
    manifest.record_artifact("predictor.json", artifacts::PREDICTOR_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("predictor.json");
    artifacts::save_predictor(&out, &params, &model_id, &protocol_id, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    let mut status = Status::ok(&manifest, vec![out.display().to_string()]);
    status.detail = Some(format!("calibration_temperature={tau:.6}"));
    Ok(status)
}
