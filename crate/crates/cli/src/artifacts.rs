//! Versioned artifact files and raw corpus input formats.
//!
//! Every artifact written by a subcommand carries a `version` key and the
//! id of the manifest that produced it; loaders reject version mismatches
//! outright. Raw corpus inputs (`problems.jsonl` and friends) are plain
//! line-delimited JSON without headers.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use stratex_core::corpus::{Problem, ProtocolConfig, Solution, Source, TrialRecord};
use stratex_core::embedding::{EmbeddingTable, TableKind};
use stratex_core::encoder::{EncoderParams, NodeEmbeddings};
use stratex_core::executability::{ExecutabilityScore, PredictorParams, FEATURE_DIM};
use stratex_core::graph::{EdgeRef, HeteroGraph, NodeKind, NodeRef, StrategyNodeMeta};
use stratex_core::taxonomy::TemplateId;

pub const CORPUS_VERSION: u32 = 1;
pub const GRAPH_VERSION: u32 = 1;
pub const ENCODER_VERSION: u32 = 1;
pub const LOSSES_VERSION: u32 = 1;
pub const NODE_EMBEDDINGS_VERSION: u32 = 1;
pub const SCORES_VERSION: u32 = 1;
pub const PREDICTOR_VERSION: u32 = 1;
pub const EVAL_VERSION: u32 = 1;
pub const STATS_VERSION: u32 = 1;
pub const RETRIEVAL_VERSION: u32 = 1;
pub const GROUND_TRUTH_VERSION: u32 = 1;

fn check_version(what: &str, got: u32, expected: u32) -> Result<()> {
    if got != expected {
        bail!("{what}: format version {got} does not match supported version {expected}");
    }
    Ok(())
}

/// Read line-delimited JSON records, reporting the line number on failure.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), idx + 1))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Raw corpus inputs
// ---------------------------------------------------------------------------

/// `strategies.jsonl` line; `template_id` is optional and filled by the
/// rule table at ingest when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawStrategy {
    pub id: String,
    pub problem_id: String,
    pub source: Source,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<TemplateId>,
}

/// `embeddings.jsonl` line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Load an embedding table, enforcing the 384-dimension, finiteness, and
/// unique-id invariants.
pub fn load_embeddings(path: &Path, kind: TableKind) -> Result<EmbeddingTable> {
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    let mut table = EmbeddingTable::new(kind);
    for r in records {
        table
            .insert(r.id, r.vector)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    }
    Ok(table)
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let records: Vec<EmbeddingRecord> = table
        .iter()
        .map(|(id, v)| EmbeddingRecord {
            id: id.clone(),
            vector: v.values().to_vec(),
        })
        .collect();
    write_jsonl(path, &records)
}

// ---------------------------------------------------------------------------
// corpus.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusFile {
    pub version: u32,
    pub manifest: String,
    pub templates: Vec<stratex_core::taxonomy::CategoryTemplate>,
    pub problems: Vec<Problem>,
    pub solutions: Vec<Solution>,
    pub strategies: Vec<stratex_core::corpus::StrategyInstance>,
    pub trials: Vec<TrialRecord>,
    pub protocols: Vec<ProtocolConfig>,
}

pub fn save_corpus(path: &Path, corpus: &stratex_core::Corpus, manifest: &str) -> Result<()> {
    write_json_pretty(
        path,
        &CorpusFile {
            version: CORPUS_VERSION,
            manifest: manifest.to_string(),
            templates: corpus.taxonomy().templates().to_vec(),
            problems: corpus.problems().to_vec(),
            solutions: corpus.solutions().to_vec(),
            strategies: corpus.strategies().to_vec(),
            trials: corpus.trials().to_vec(),
            protocols: corpus.protocols().to_vec(),
        },
    )
}

pub fn load_corpus(path: &Path) -> Result<stratex_core::Corpus> {
    let file: CorpusFile = read_json(path)?;
    check_version("corpus.json", file.version, CORPUS_VERSION)?;
    let taxonomy = stratex_core::taxonomy::Taxonomy::from_templates(file.templates)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    stratex_core::Corpus::new(
        file.problems,
        file.solutions,
        file.strategies,
        file.trials,
        file.protocols,
        taxonomy,
    )
    .map_err(|e| anyhow!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// graph.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphStrategyNode {
    pub id: String,
    #[serde(flatten)]
    pub meta: StrategyNodeMeta,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub manifest: String,
    pub self_loops: bool,
    /// Problem node ids; features are referenced by id in the problem
    /// embeddings file, never inlined.
    pub problems: Vec<String>,
    /// Strategy nodes; the node id doubles as the feature reference into
    /// the strategy embeddings file.
    pub strategies: Vec<GraphStrategyNode>,
    pub instance_map: BTreeMap<String, String>,
    pub edges: Vec<EdgeRef>,
}

pub fn save_graph(path: &Path, graph: &HeteroGraph, manifest: &str) -> Result<()> {
    let problems: Vec<String> = graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Problem)
        .map(|n| n.id.clone())
        .collect();
    let strategies: Vec<GraphStrategyNode> = graph
        .strategy_nodes()
        .map(|(id, meta)| GraphStrategyNode {
            id: id.clone(),
            meta: meta.clone(),
        })
        .collect();
    write_json_pretty(
        path,
        &GraphFile {
            version: GRAPH_VERSION,
            manifest: manifest.to_string(),
            self_loops: graph.self_loops(),
            problems,
            strategies,
            instance_map: graph.instance_map().clone(),
            edges: graph.edges().to_vec(),
        },
    )
}

pub fn load_graph_skeleton(path: &Path) -> Result<GraphFile> {
    let file: GraphFile = read_json(path)?;
    check_version("graph.json", file.version, GRAPH_VERSION)?;
    Ok(file)
}

/// Rebuild the full graph from its checkpoint plus the embedding tables the
/// checkpoint references.
pub fn load_graph(
    path: &Path,
    problem_embeddings: &EmbeddingTable,
    strategy_embeddings: &EmbeddingTable,
) -> Result<HeteroGraph> {
    let file = load_graph_skeleton(path)?;
    HeteroGraph::from_parts(
        file.problems,
        file.strategies.into_iter().map(|s| (s.id, s.meta)).collect(),
        file.instance_map,
        file.edges,
        problem_embeddings,
        strategy_embeddings,
        file.self_loops,
    )
    .map_err(|e| anyhow!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// encoder.json + losses.json + node-embeddings.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncoderFile {
    pub version: u32,
    pub manifest: String,
    pub dropout: f64,
    pub seed: u64,
    /// Row-major tensors keyed by canonical parameter name.
    pub tensors: BTreeMap<String, TensorRecord>,
}

pub fn save_encoder(path: &Path, params: &EncoderParams, manifest: &str) -> Result<()> {
    let tensors: BTreeMap<String, TensorRecord> = params
        .named_tensors()
        .into_iter()
        .map(|(name, shape, data)| {
            (
                name,
                TensorRecord {
                    shape,
                    data: data.to_vec(),
                },
            )
        })
        .collect();
    write_json_pretty(
        path,
        &EncoderFile {
            version: ENCODER_VERSION,
            manifest: manifest.to_string(),
            dropout: params.dropout,
            seed: params.seed,
            tensors,
        },
    )
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let file: EncoderFile = read_json(path)?;
    check_version("encoder.json", file.version, ENCODER_VERSION)?;
    let mut params = EncoderParams::zeros(file.dropout, file.seed);
    let mut flat = Vec::with_capacity(params.flat_len());
    for (name, shape, _) in params.named_tensors() {
        let tensor = file
            .tensors
            .get(&name)
            .ok_or_else(|| anyhow!("{}: missing tensor `{name}`", path.display()))?;
        if tensor.shape != shape {
            bail!(
                "{}: tensor `{name}` has shape {:?}, expected {:?}",
                path.display(),
                tensor.shape,
                shape
            );
        }
        flat.extend_from_slice(&tensor.data);
    }
    if flat.len() != params.flat_len() {
        bail!("{}: tensor data does not cover the parameter space", path.display());
    }
    params.set_from_flat(&flat);
    params
        .validate()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(params)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LossesFile {
    pub version: u32,
    pub manifest: String,
    pub per_epoch: Vec<f64>,
}

pub fn save_losses(path: &Path, per_epoch: &[f64], manifest: &str) -> Result<()> {
    write_json_pretty(
        path,
        &LossesFile {
            version: LOSSES_VERSION,
            manifest: manifest.to_string(),
            per_epoch: per_epoch.to_vec(),
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeEmbeddingsFile {
    pub version: u32,
    pub manifest: String,
    pub dim: usize,
    /// Keys are `problem:<id>`, `strategy:<id>`, or `category:<id>`.
    pub entries: BTreeMap<String, Vec<f64>>,
}

fn node_key(node: &NodeRef) -> String {
    let kind = match node.kind {
        NodeKind::Problem => "problem",
        NodeKind::Strategy => "strategy",
        NodeKind::Category => "category",
    };
    format!("{kind}:{}", node.id)
}

fn parse_node_key(key: &str) -> Result<NodeRef> {
    let (kind, id) = key
        .split_once(':')
        .ok_or_else(|| anyhow!("malformed node key `{key}`"))?;
    let kind = match kind {
        "problem" => NodeKind::Problem,
        "strategy" => NodeKind::Strategy,
        "category" => NodeKind::Category,
        other => bail!("unknown node kind `{other}`"),
    };
    Ok(NodeRef { kind, id: id.to_string() })
}

pub fn save_node_embeddings(
    path: &Path,
    embeddings: &NodeEmbeddings,
    manifest: &str,
) -> Result<()> {
    let entries: BTreeMap<String, Vec<f64>> = embeddings
        .iter()
        .map(|(node, v)| (node_key(node), v.clone()))
        .collect();
    write_json_pretty(
        path,
        &NodeEmbeddingsFile {
            version: NODE_EMBEDDINGS_VERSION,
            manifest: manifest.to_string(),
            dim: stratex_core::encoder::HIDDEN_DIM,
            entries,
        },
    )
}

pub fn load_node_embeddings(path: &Path) -> Result<NodeEmbeddings> {
    let file: NodeEmbeddingsFile = read_json(path)?;
    check_version("node-embeddings.json", file.version, NODE_EMBEDDINGS_VERSION)?;
    let mut entries = BTreeMap::new();
    for (key, v) in file.entries {
        if v.len() != file.dim {
            bail!("{}: embedding `{key}` has dimension {}", path.display(), v.len());
        }
        entries.insert(parse_node_key(&key)?, v);
    }
    Ok(NodeEmbeddings::from_entries(entries))
}

// ---------------------------------------------------------------------------
// scores.jsonl
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ScoresHeader {
    version: u32,
    manifest: String,
}

/// Write executability scores: a header line with version/manifest, then
/// one score record per line.
pub fn save_scores(path: &Path, scores: &[ExecutabilityScore], manifest: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(
        &mut file,
        &ScoresHeader {
            version: SCORES_VERSION,
            manifest: manifest.to_string(),
        },
    )?;
    file.write_all(b"\n")?;
    for score in scores {
        serde_json::to_writer(&mut file, score)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<ExecutabilityScore>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty scores file", path.display()))?
        .with_context(|| format!("{}: reading header", path.display()))?;
    let header: ScoresHeader = serde_json::from_str(&header_line)
        .with_context(|| format!("{}: malformed header", path.display()))?;
    check_version("scores.jsonl", header.version, SCORES_VERSION)?;
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.with_context(|| format!("{}:{}", path.display(), idx + 2))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed score", path.display(), idx + 2))?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// predictor.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictorFile {
    pub version: u32,
    pub manifest: String,
    pub theta: Vec<f64>,
    pub l2_lambda: f64,
    pub calibration_temperature: f64,
    pub model_id: String,
    pub protocol_id: String,
}

pub fn save_predictor(
    path: &Path,
    params: &PredictorParams,
    model_id: &str,
    protocol_id: &str,
    manifest: &str,
) -> Result<()> {
    write_json_pretty(
        path,
        &PredictorFile {
            version: PREDICTOR_VERSION,
            manifest: manifest.to_string(),
            theta: params.theta.to_vec(),
            l2_lambda: params.l2_lambda,
            calibration_temperature: params.calibration_temperature,
            model_id: model_id.to_string(),
            protocol_id: protocol_id.to_string(),
        },
    )
}

pub fn load_predictor(path: &Path) -> Result<(PredictorParams, String, String)> {
    let file: PredictorFile = read_json(path)?;
    check_version("predictor.json", file.version, PREDICTOR_VERSION)?;
    if file.theta.len() != FEATURE_DIM {
        bail!(
            "{}: theta has {} entries, expected {FEATURE_DIM}",
            path.display(),
            file.theta.len()
        );
    }
    let mut theta = [0.0; FEATURE_DIM];
    theta.copy_from_slice(&file.theta);
    let params = PredictorParams {
        theta,
        l2_lambda: file.l2_lambda,
        calibration_temperature: file.calibration_temperature,
    };
    params
        .validate()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((params, file.model_id, file.protocol_id))
}

// ---------------------------------------------------------------------------
// ground-truth.json (synthetic corpora)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub version: u32,
    pub manifest: String,
    pub hi: f64,
    pub lo: f64,
    pub planted: BTreeMap<String, TemplateId>,
    pub executable_source: BTreeMap<TemplateId, Source>,
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    let file: GroundTruthFile = read_json(path)?;
    check_version("ground-truth.json", file.version, GROUND_TRUTH_VERSION)?;
    Ok(file)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json_pretty(path, value)
}
