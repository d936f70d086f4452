//! Inference-side commands: retrieve, guide, eval.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use stratex_core::corpus::Source;
use stratex_core::prompts::assemble_guidance_prompt;
use stratex_core::retrieval::{retrieve, RankedStrategy, Route};

use crate::artifacts;
use crate::commands::{Ctx, Status};
use crate::config::Config;
use crate::pipeline::{evaluate_probes, problem_embedding, run_pipeline};

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// JSON file holding {"id": ..., "text": ...} for the query problem.
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
    /// Query problem id to look up in the corpus.
    #[arg(long)]
    pub problem_id: Option<String>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub node_embeddings: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub problem_embeddings: PathBuf,
    #[arg(long)]
    pub strategy_embeddings: PathBuf,
    /// Override the enabled routes, e.g. `A,C` (ablation switch).
    #[arg(long)]
    pub routes: Option<String>,
    /// Sentence-embedding service for problems without stored embeddings.
    #[arg(long)]
    pub embed_endpoint: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryProblem {
    id: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct RetrievalCandidate<'a> {
    strategy_id: &'a str,
    text: &'a str,
    source: Source,
    routes: Vec<&'static str>,
    score: f64,
}

#[derive(Debug, Serialize)]
struct RetrievalFile<'a> {
    version: u32,
    manifest: String,
    problem_id: &'a str,
    candidates: Vec<RetrievalCandidate<'a>>,
}

fn route_name(route: &Route) -> &'static str {
    match route {
        Route::A => "A",
        Route::B => "B",
        Route::C => "C",
    }
}

pub fn retrieve_cmd(ctx: &Ctx, query: &QueryArgs, render_prompt: bool) -> Result<Status> {
    let corpus = artifacts::load_corpus(&query.corpus)?;
    let (predictor, _, _) = artifacts::load_predictor(&query.predictor)?;
    let (stores, problems, _) = super::model::load_stores(
        ctx,
        &query.graph,
        &query.scores,
        &query.node_embeddings,
        &query.problem_embeddings,
        &query.strategy_embeddings,
        predictor,
    )?;

    let (problem_id, problem_text) = match (&query.problem_file, &query.problem_id) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let q: QueryProblem = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            (q.id, q.text)
        }
        (None, Some(id)) => {
            let p = corpus
                .problem(id)
                .ok_or_else(|| anyhow!("problem `{id}` not found in the corpus"))?;
            (p.id.clone(), p.text.clone())
        }
        _ => bail!("pass exactly one of --problem-file or --problem-id"),
    };

    let x = problem_embedding(
        &problem_id,
        Some(&problem_text),
        &problems,
        query.embed_endpoint.as_deref(),
        ctx.config.embed_batch_max,
    )?;

    let mut retrieval_config = ctx.config.retrieval();
    if let Some(routes) = &query.routes {
        let mut cfg = Config::default();
        cfg.apply("routes.enabled", routes)?;
        retrieval_config.routes_enabled = cfg.routes_enabled.into_iter().collect();
    }
    let ranked = retrieve(&x, &stores.retrieval_stores(), &retrieval_config)
        .map_err(|e| anyhow!("retrieval: {e}"))?;

    let inputs = [
        query.corpus.as_path(),
        query.graph.as_path(),
        query.scores.as_path(),
        query.node_embeddings.as_path(),
        query.predictor.as_path(),
        query.problem_embeddings.as_path(),
        query.strategy_embeddings.as_path(),
    ];
    let command = if render_prompt { "guide" } else { "retrieve" };
    let mut manifest = ctx.manifest(command, &inputs)?;
    manifest.record_artifact("retrieval.json", artifacts::RETRIEVAL_VERSION);
    ctx.ensure_out_dir()?;

    let candidates: Vec<RetrievalCandidate> = ranked
        .iter()
        .map(|r: &RankedStrategy| RetrievalCandidate {
            strategy_id: &r.strategy_id,
            text: &r.text,
            source: r.source,
            routes: r.routes.iter().map(route_name).collect(),
            score: r.score,
        })
        .collect();
    let retrieval_out = ctx.out_path("retrieval.json");
    artifacts::save_json(
        &retrieval_out,
        &RetrievalFile {
            version: artifacts::RETRIEVAL_VERSION,
            manifest: manifest.manifest_id.clone(),
            problem_id: &problem_id,
            candidates,
        },
    )?;
    let mut outputs = vec![retrieval_out.display().to_string()];

    if render_prompt {
        let texts: Vec<&str> = ranked.iter().map(|r| r.text.as_str()).collect();
        let prompt = assemble_guidance_prompt(&problem_text, &texts)
            .map_err(|e| anyhow!("rendering guidance prompt: {e}"))?;
        let prompt_out = ctx.out_path("guidance-prompt.txt");
        std::fs::write(&prompt_out, prompt)
            .with_context(|| format!("writing {}", prompt_out.display()))?;
        outputs.push(prompt_out.display().to_string());
    }

    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, outputs))
}

#[derive(Debug, Serialize)]
struct EvalFile {
    version: u32,
    manifest: String,
    seed: u64,
    #[serde(flatten)]
    report: crate::pipeline::EvalReport,
}

/// Run the full pipeline on a synthetic corpus directory and judge test
/// probes against its planted ground truth.
pub fn eval(ctx: &Ctx, data_dir: &Path) -> Result<Status> {
    let ground_truth = artifacts::load_ground_truth(&data_dir.join("ground-truth.json"))?;

    // Ingest in place, keeping the generated split labels.
    let problems: Vec<stratex_core::corpus::Problem> =
        artifacts::read_jsonl(&data_dir.join("problems.jsonl"))?;
    let solutions = artifacts::read_jsonl(&data_dir.join("solutions.jsonl"))?;
    let strategies = artifacts::read_jsonl(&data_dir.join("strategies.jsonl"))?;
    let trials = artifacts::read_jsonl(&data_dir.join("trials.jsonl"))?;
    let protocols = artifacts::read_jsonl(&data_dir.join("protocols.jsonl"))?;
    let templates = std::fs::read_to_string(data_dir.join("templates.json"))?;
    let taxonomy = stratex_core::taxonomy::Taxonomy::from_json(&templates)
        .map_err(|e| anyhow!("templates.json: {e}"))?;
    let corpus =
        stratex_core::Corpus::new(problems, solutions, strategies, trials, protocols, taxonomy)
            .map_err(|e| anyhow!("corpus validation: {e}"))?;
    if corpus.problems().iter().any(|p| p.split.is_none()) {
        bail!("eval corpus must carry split labels (generate it with gen-synthetic)");
    }

    let problem_embeddings = artifacts::load_embeddings(
        &data_dir.join("problem-embeddings.jsonl"),
        stratex_core::embedding::TableKind::Problem,
    )?;
    let strategy_embeddings = artifacts::load_embeddings(
        &data_dir.join("strategy-embeddings.jsonl"),
        stratex_core::embedding::TableKind::Strategy,
    )?;

    let (stores, _losses) = run_pipeline(
        &corpus,
        &problem_embeddings,
        &strategy_embeddings,
        &ctx.config,
        ctx.seed,
    )?;

    let is_executable = |problem_id: &str, template: &str, source: Source| {
        ground_truth.planted.get(problem_id).is_some_and(|t| t == template)
            && ground_truth.executable_source.get(template) == Some(&source)
    };
    let report = evaluate_probes(
        &corpus,
        &stores,
        &problem_embeddings,
        &ctx.config,
        ctx.seed,
        &is_executable,
    )?;

    let inputs = [
        data_dir.join("problems.jsonl"),
        data_dir.join("strategies.jsonl"),
        data_dir.join("trials.jsonl"),
        data_dir.join("ground-truth.json"),
    ];
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut manifest = ctx.manifest("eval", &input_refs)?;
    manifest.record_artifact("eval.json", artifacts::EVAL_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("eval.json");
    artifacts::save_json(
        &out,
        &EvalFile {
            version: artifacts::EVAL_VERSION,
            manifest: manifest.manifest_id.clone(),
            seed: ctx.seed,
            report,
        },
    )?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}
