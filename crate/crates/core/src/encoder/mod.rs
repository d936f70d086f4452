//! Heterogeneous graph transformer encoder.
//!
//! Three stacked attention layers over the strategy knowledge graph produce
//! 128-dim node embeddings from 384-dim text features. Per-node-type input
//! projections feed shared layer weights; each layer runs 4-head scaled
//! dot-product attention over a node's neighbors plus itself, concatenates
//! heads, output-projects, applies dropout (train only), then a residual add
//! and layer normalization.
//!
//! Training optimizes an InfoNCE objective over executability-labeled
//! problem–strategy pairs. Both the forward and backward passes are written
//! out by hand here; `grad_check` cross-validates the analytic gradients
//! against central finite differences.

mod backward;
mod forward;
mod loss;
mod train;

pub use backward::backward;
pub use forward::{forward, forward_cached, ForwardCache, Mode};
pub use loss::{batch_loss_and_grad, embedding_auc, infonce_loss, sample_negatives, PairBatch};
pub use train::{grad_check, train, Adam, TrainConfig};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{HeteroGraph, NodeKind, NodeRef};
use crate::linalg::Mat;
use crate::rng;

/// Input (sentence embedding) dimension.
pub const INPUT_DIM: usize = crate::embedding::EMBEDDING_DIM;
/// Hidden and output embedding dimension.
pub const HIDDEN_DIM: usize = 128;
/// Attention heads per layer.
pub const NUM_HEADS: usize = 4;
/// Per-head dimension; heads concatenate back to `HIDDEN_DIM`.
pub const HEAD_DIM: usize = HIDDEN_DIM / NUM_HEADS;
/// Stacked graph transformer layers.
pub const NUM_LAYERS: usize = 3;
/// Layer normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("tensor `{tensor}` has wrong shape")]
    InvalidShape { tensor: String },
    #[error("non-finite value produced at {stage}")]
    NonFinite { stage: &'static str },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("at least one negative is required")]
    NoNegatives,
    #[error("no negatives exist anywhere in the supervision set")]
    NoGlobalNegatives,
    #[error("supervision set is empty")]
    EmptySupervision,
    #[error("supervision pair references unknown graph node `{0}`")]
    UnknownPairNode(String),
    #[error("positives and negatives overlap for problem `{0}`")]
    OverlappingSupervision(String),
    #[error("zero vector has no cosine direction")]
    ZeroVector,
    #[error("held-out pairs must contain both classes")]
    SingleClass,
    #[error("gradient check requires a non-empty parameter subset")]
    EmptySubset,
    #[error("missing embedding for node `{0}`")]
    MissingNode(String),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// A dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl LinearParams {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            weight: Mat::zeros(out_dim, in_dim),
            bias: alloc::vec![0.0; out_dim],
        }
    }
}

/// One graph transformer layer: per-head Q/K/V projections, an output
/// projection over the concatenated heads, and layer-norm gain/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Vec<Mat>,
    pub key: Vec<Mat>,
    pub value: Vec<Mat>,
    pub output: LinearParams,
    pub norm_gain: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

impl LayerParams {
    fn zeros() -> Self {
        let head = || (0..NUM_HEADS).map(|_| Mat::zeros(HEAD_DIM, HIDDEN_DIM)).collect();
        LayerParams {
            query: head(),
            key: head(),
            value: head(),
            output: LinearParams::zeros(HIDDEN_DIM, HIDDEN_DIM),
            norm_gain: alloc::vec![0.0; HIDDEN_DIM],
            norm_shift: alloc::vec![0.0; HIDDEN_DIM],
        }
    }
}

/// All encoder parameters plus the non-trainable dropout rate and the seed
/// the parameters were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_problem: LinearParams,
    pub input_strategy: LinearParams,
    pub input_category: LinearParams,
    pub layers: Vec<LayerParams>,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderParams {
    /// All-zero parameters with the canonical shapes.
    pub fn zeros(dropout: f64, seed: u64) -> Self {
        EncoderParams {
            input_problem: LinearParams::zeros(HIDDEN_DIM, INPUT_DIM),
            input_strategy: LinearParams::zeros(HIDDEN_DIM, INPUT_DIM),
            input_category: LinearParams::zeros(HIDDEN_DIM, INPUT_DIM),
            layers: (0..NUM_LAYERS).map(|_| LayerParams::zeros()).collect(),
            dropout,
            seed,
        }
    }

    /// Zero-valued clone with identical shapes; the gradient container.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dropout, self.seed)
    }

    pub fn input_for(&self, kind: NodeKind) -> &LinearParams {
        match kind {
            NodeKind::Problem => &self.input_problem,
            NodeKind::Strategy => &self.input_strategy,
            NodeKind::Category => &self.input_category,
        }
    }

    pub fn input_for_mut(&mut self, kind: NodeKind) -> &mut LinearParams {
        match kind {
            NodeKind::Problem => &mut self.input_problem,
            NodeKind::Strategy => &mut self.input_strategy,
            NodeKind::Category => &mut self.input_category,
        }
    }

    /// Named tensors in canonical order: flat row-major data plus shape.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, lin) in [
            ("input_proj.problem", &self.input_problem),
            ("input_proj.strategy", &self.input_strategy),
            ("input_proj.category", &self.input_category),
        ] {
            out.push((
                format!("{name}.weight"),
                alloc::vec![lin.weight.rows, lin.weight.cols],
                lin.weight.data.as_slice(),
            ));
            out.push((format!("{name}.bias"), alloc::vec![lin.bias.len()], lin.bias.as_slice()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (tag, heads) in [("query", &layer.query), ("key", &layer.key), ("value", &layer.value)] {
                for (h, mat) in heads.iter().enumerate() {
                    out.push((
                        format!("layers.{l}.{tag}.{h}"),
                        alloc::vec![mat.rows, mat.cols],
                        mat.data.as_slice(),
                    ));
                }
            }
            out.push((
                format!("layers.{l}.output.weight"),
                alloc::vec![layer.output.weight.rows, layer.output.weight.cols],
                layer.output.weight.data.as_slice(),
            ));
            out.push((
                format!("layers.{l}.output.bias"),
                alloc::vec![layer.output.bias.len()],
                layer.output.bias.as_slice(),
            ));
            out.push((
                format!("layers.{l}.norm.gain"),
                alloc::vec![layer.norm_gain.len()],
                layer.norm_gain.as_slice(),
            ));
            out.push((
                format!("layers.{l}.norm.shift"),
                alloc::vec![layer.norm_shift.len()],
                layer.norm_shift.as_slice(),
            ));
        }
        out
    }

    fn flat_chunks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for lin in [
            &mut self.input_problem,
            &mut self.input_strategy,
            &mut self.input_category,
        ] {
            out.push(lin.weight.data.as_mut_slice());
            out.push(lin.bias.as_mut_slice());
        }
        for layer in &mut self.layers {
            for heads in [&mut layer.query, &mut layer.key, &mut layer.value] {
                for mat in heads.iter_mut() {
                    out.push(mat.data.as_mut_slice());
                }
            }
            out.push(layer.output.weight.data.as_mut_slice());
            out.push(layer.output.bias.as_mut_slice());
            out.push(layer.norm_gain.as_mut_slice());
            out.push(layer.norm_shift.as_mut_slice());
        }
        out
    }

    /// Total number of trainable scalars.
    pub fn flat_len(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Flatten all trainable parameters in canonical tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.flat_len());
        for (_, _, data) in self.named_tensors() {
            flat.extend_from_slice(data);
        }
        flat
    }

    /// Overwrite all trainable parameters from a flat vector.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for chunk in self.flat_chunks_mut() {
            chunk.copy_from_slice(&flat[offset..offset + chunk.len()]);
            offset += chunk.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    /// Shape and finiteness check over every tensor.
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers.len() != NUM_LAYERS {
            return Err(EncoderError::InvalidShape {
                tensor: "layers".into(),
            });
        }
        for (name, shape, data) in self.named_tensors() {
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(EncoderError::InvalidShape { tensor: name });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(EncoderError::InvalidShape { tensor: name });
            }
        }
        for layer in &self.layers {
            for heads in [&layer.query, &layer.key, &layer.value] {
                if heads.len() != NUM_HEADS
                    || heads.iter().any(|m| m.rows != HEAD_DIM || m.cols != HIDDEN_DIM)
                {
                    return Err(EncoderError::InvalidShape {
                        tensor: "heads".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

const INIT_STREAM: u64 = 0x494e4954; // "INIT"

/// Deterministic Glorot-uniform initialization: weights uniform in
/// ±sqrt(6/(fan_in+fan_out)), biases zero, layer-norm gain 1 and shift 0.
pub fn init_params(seed: u64) -> EncoderParams {
    let mut params = EncoderParams::zeros(0.1, seed);
    let mut stream = rng::substream(seed, INIT_STREAM);
    let mut fill = |mat: &mut Mat| {
        let limit = crate::num::sqrt(6.0 / (mat.cols + mat.rows) as f64);
        for v in &mut mat.data {
            *v = rng::uniform(&mut stream, -limit, limit);
        }
    };
    fill(&mut params.input_problem.weight);
    fill(&mut params.input_strategy.weight);
    fill(&mut params.input_category.weight);
    for l in 0..NUM_LAYERS {
        for h in 0..NUM_HEADS {
            fill(&mut params.layers[l].query[h]);
        }
        for h in 0..NUM_HEADS {
            fill(&mut params.layers[l].key[h]);
        }
        for h in 0..NUM_HEADS {
            fill(&mut params.layers[l].value[h]);
        }
        fill(&mut params.layers[l].output.weight);
        for v in &mut params.layers[l].norm_gain {
            *v = 1.0;
        }
    }
    params
}

/// Final node embeddings keyed by node reference.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    entries: BTreeMap<NodeRef, Vec<f64>>,
}

impl NodeEmbeddings {
    /// Wrap a full embedding map, checking that every graph node is present
    /// and every vector is finite and `HIDDEN_DIM`-sized.
    pub fn new(graph: &HeteroGraph, entries: BTreeMap<NodeRef, Vec<f64>>) -> Result<Self, EncoderError> {
        for node in graph.nodes() {
            let v = entries
                .get(node)
                .ok_or_else(|| EncoderError::MissingNode(node.id.clone()))?;
            if v.len() != HIDDEN_DIM {
                return Err(EncoderError::InvalidShape {
                    tensor: format!("embedding for `{}`", node.id),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EncoderError::NonFinite { stage: "embeddings" });
            }
        }
        Ok(NodeEmbeddings { entries })
    }

    /// Wrap without a graph to check against (deserialization path).
    pub fn from_entries(entries: BTreeMap<NodeRef, Vec<f64>>) -> Self {
        NodeEmbeddings { entries }
    }

    pub fn get(&self, node: &NodeRef) -> Option<&Vec<f64>> {
        self.entries.get(node)
    }

    pub fn require(&self, node: &NodeRef) -> Result<&Vec<f64>, EncoderError> {
        self.get(node).ok_or_else(|| EncoderError::MissingNode(node.id.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeRef, &Vec<f64>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Executability-labeled training pairs: positives as (problem, strategy)
/// node-id pairs, negatives listed per problem. Ambiguous pairs are simply
/// absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupervisionSet {
    positives: Vec<(String, String)>,
    negatives: BTreeMap<String, Vec<String>>,
}

impl SupervisionSet {
    pub fn new(
        mut positives: Vec<(String, String)>,
        mut negatives: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, EncoderError> {
        positives.sort();
        positives.dedup();
        for list in negatives.values_mut() {
            list.sort();
            list.dedup();
        }
        for (p, s) in &positives {
            if negatives.get(p).is_some_and(|negs| negs.binary_search(s).is_ok()) {
                return Err(EncoderError::OverlappingSupervision(p.clone()));
            }
        }
        Ok(SupervisionSet { positives, negatives })
    }

    pub fn positives(&self) -> &[(String, String)] {
        &self.positives
    }

    pub fn negatives_of(&self, problem_id: &str) -> &[String] {
        self.negatives.get(problem_id).map_or(&[], |v| v.as_slice())
    }

    /// All negative-labeled strategy ids across problems, deduplicated.
    pub fn global_negative_pool(&self) -> Vec<String> {
        let pool: BTreeSet<&String> = self.negatives.values().flatten().collect();
        pool.into_iter().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_given_seed() {
        let a = init_params(42);
        let b = init_params(42);
        assert_eq!(a, b);
        let c = init_params(43);
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_match_the_architecture() {
        let p = init_params(1);
        assert_eq!(p.input_problem.weight.rows, HIDDEN_DIM);
        assert_eq!(p.input_problem.weight.cols, INPUT_DIM);
        assert_eq!(p.input_strategy.weight.cols, 384);
        assert_eq!(p.layers.len(), NUM_LAYERS);
        for layer in &p.layers {
            assert_eq!(layer.query.len(), NUM_HEADS);
            assert_eq!(layer.query[0].rows, HEAD_DIM);
            assert_eq!(layer.query[0].cols, HIDDEN_DIM);
            assert_eq!(layer.output.weight.rows, HIDDEN_DIM);
            assert_eq!(layer.output.weight.cols, HIDDEN_DIM);
        }
        p.validate().unwrap();
    }

    #[test]
    fn init_biases_zero_gains_one() {
        let p = init_params(9);
        assert!(p.input_problem.bias.iter().all(|&v| v == 0.0));
        for layer in &p.layers {
            assert!(layer.norm_gain.iter().all(|&v| v == 1.0));
            assert!(layer.norm_shift.iter().all(|&v| v == 0.0));
            assert!(layer.output.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_weights_respect_glorot_bound() {
        let p = init_params(5);
        let limit = crate::num::sqrt(6.0 / (INPUT_DIM + HIDDEN_DIM) as f64);
        assert!(p.input_problem.weight.data.iter().all(|v| v.abs() <= limit));
        let head_limit = crate::num::sqrt(6.0 / (HIDDEN_DIM + HEAD_DIM) as f64);
        assert!(p.layers[0].query[0].data.iter().all(|v| v.abs() <= head_limit));
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let p = init_params(3);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.flat_len());
        let mut q = p.zeros_like();
        q.set_from_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn named_tensors_cover_all_params_once() {
        let p = init_params(3);
        let total: usize = p.named_tensors().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        assert_eq!(total, p.flat_len());
        let names: BTreeSet<String> = p.named_tensors().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names.len(), p.named_tensors().len(), "names unique");
        assert!(names.contains("layers.2.norm.shift"));
        assert!(names.contains("input_proj.category.weight"));
    }

    #[test]
    fn overlapping_supervision_is_rejected() {
        let err = SupervisionSet::new(
            alloc::vec![("p1".into(), "s1".into())],
            BTreeMap::from([("p1".into(), alloc::vec!["s1".into()])]),
        )
        .unwrap_err();
        assert_eq!(err, EncoderError::OverlappingSupervision("p1".into()));
    }
}
