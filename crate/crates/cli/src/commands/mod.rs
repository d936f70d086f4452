//! Subcommand definitions and dispatch.
//!
//! Every subcommand reads and writes the documented artifact files under
//! `--out-dir`, writes a run manifest, and prints exactly one JSON status
//! line on success. Any error exits non-zero.

mod data;
mod infer;
mod model;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::Config;
use crate::manifest::{digest_file, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "stratex",
    about = "Executability-aware strategy retrieval engine",
    version
)]
pub struct Cli {
    /// Key=value config file overriding the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every stochastic stage of the invoked command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory artifacts are written to.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw corpus directory and assign splits.
    Ingest {
        /// Directory holding problems.jsonl, solutions.jsonl,
        /// strategies.jsonl, trials.jsonl, templates.json, rules.txt, and
        /// optionally protocols.jsonl.
        #[arg(long)]
        data_dir: PathBuf,
        /// Comma-separated train,validation,test ratios.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        /// Keep split labels already present in problems.jsonl instead of
        /// reassigning them.
        #[arg(long)]
        respect_splits: bool,
    },
    /// Per-problem-normalized usage statistics and human-model divergence.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Build the strategy knowledge graph from the train split.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        problem_embeddings: PathBuf,
        #[arg(long)]
        strategy_embeddings: PathBuf,
    },
    /// Score executability of (problem, strategy) pairs from trial records.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        protocol_id: Option<String>,
    },
    /// Train the graph encoder with the contrastive objective.
    TrainEncoder {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        problem_embeddings: PathBuf,
        #[arg(long)]
        strategy_embeddings: PathBuf,
    },
    /// Fit the logistic executability predictor on train-split trials.
    FitPredictor {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        node_embeddings: PathBuf,
        #[arg(long)]
        problem_embeddings: PathBuf,
        #[arg(long)]
        strategy_embeddings: PathBuf,
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        protocol_id: Option<String>,
    },
    /// Temperature-scale the predictor on the validation split.
    Calibrate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        node_embeddings: PathBuf,
        #[arg(long)]
        problem_embeddings: PathBuf,
        #[arg(long)]
        strategy_embeddings: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Retrieve ranked guidance strategies for one problem.
    Retrieve {
        #[command(flatten)]
        query: infer::QueryArgs,
    },
    /// Retrieve strategies and render the guidance prompt.
    Guide {
        #[command(flatten)]
        query: infer::QueryArgs,
    },
    /// End-to-end pipeline evaluation on a synthetic corpus directory.
    Eval {
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Generate a synthetic corpus with planted executability.
    GenSynthetic {
        #[arg(long, default_value_t = 240)]
        n_problems: usize,
        /// Decoding trials recorded per (problem, strategy) pair.
        #[arg(long, default_value_t = 10)]
        trials_per_pair: usize,
        /// Collect trials through the mock solver harness instead of
        /// sampling them directly.
        #[arg(long)]
        collect_trials: bool,
    },
}

/// Per-run context shared by every subcommand.
pub struct Ctx {
    pub config: Config,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        Ok(Ctx {
            config,
            seed: cli.seed,
            out_dir: cli.out_dir.clone(),
        })
    }

    /// Start a manifest for this command, digesting the named input files.
    pub fn manifest(&self, command: &str, inputs: &[&Path]) -> Result<RunManifest> {
        let mut digests = BTreeMap::new();
        for path in inputs {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            digests.insert(name, digest_file(path)?);
        }
        Ok(RunManifest::new(
            command,
            self.seed,
            self.config.snapshot(),
            digests,
        ))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))
    }
}

/// The single JSON status line printed on success.
#[derive(Debug, Serialize)]
pub struct Status {
    pub status: &'static str,
    pub command: String,
    pub manifest: String,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Status {
    pub fn ok(manifest: &RunManifest, outputs: Vec<String>) -> Self {
        Status {
            status: "ok",
            command: manifest.command.clone(),
            manifest: manifest.manifest_id.clone(),
            outputs,
            detail: None,
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    let ctx = Ctx::from_cli(&cli)?;
    match cli.command {
        Command::Ingest {
            data_dir,
            ratios,
            respect_splits,
        } => data::ingest(&ctx, &data_dir, &ratios, respect_splits),
        Command::Stats { corpus } => data::stats(&ctx, &corpus),
        Command::GenSynthetic {
            n_problems,
            trials_per_pair,
            collect_trials,
        } => data::gen_synthetic(&ctx, n_problems, trials_per_pair, collect_trials),
        Command::BuildGraph {
            corpus,
            problem_embeddings,
            strategy_embeddings,
        } => model::build_graph(&ctx, &corpus, &problem_embeddings, &strategy_embeddings),
        Command::Label {
            corpus,
            graph,
            model_id,
            protocol_id,
        } => model::label(&ctx, &corpus, &graph, model_id.as_deref(), protocol_id.as_deref()),
        Command::TrainEncoder {
            graph,
            scores,
            problem_embeddings,
            strategy_embeddings,
        } => model::train_encoder(&ctx, &graph, &scores, &problem_embeddings, &strategy_embeddings),
        Command::FitPredictor {
            corpus,
            graph,
            scores,
            node_embeddings,
            problem_embeddings,
            strategy_embeddings,
            model_id,
            protocol_id,
        } => model::fit_predictor(
            &ctx,
            &corpus,
            &graph,
            &scores,
            &node_embeddings,
            &problem_embeddings,
            &strategy_embeddings,
            model_id.as_deref(),
            protocol_id.as_deref(),
        ),
        Command::Calibrate {
            corpus,
            graph,
            scores,
            node_embeddings,
            problem_embeddings,
            strategy_embeddings,
            predictor,
        } => model::calibrate_cmd(
            &ctx,
            &corpus,
            &graph,
            &scores,
            &node_embeddings,
            &problem_embeddings,
            &strategy_embeddings,
            &predictor,
        ),
        Command::Retrieve { query } => infer::retrieve_cmd(&ctx, &query, false),
        Command::Guide { query } => infer::retrieve_cmd(&ctx, &query, true),
        Command::Eval { data_dir } => infer::eval(&ctx, &data_dir),
    }
}
