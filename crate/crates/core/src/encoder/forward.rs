//! Forward pass of the graph transformer, with full intermediate caching
//! for the hand-written backward pass.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::HeteroGraph;
use crate::linalg;
use crate::num;
use crate::rng;

use super::{EncoderError, EncoderParams, NodeEmbeddings, HEAD_DIM, HIDDEN_DIM, LAYER_NORM_EPS, NUM_HEADS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything the backward pass needs from one layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Layer input, n × HIDDEN.
    pub input: Vec<Vec<f64>>,
    /// Per-head projected queries/keys/values, `[head][node] -> HEAD_DIM`.
    pub q: Vec<Vec<Vec<f64>>>,
    pub k: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<Vec<f64>>>,
    /// Per-head attention rows over each node's neighborhood list.
    pub attn: Vec<Vec<Vec<f64>>>,
    /// Concatenated head messages before the output projection.
    pub msg: Vec<Vec<f64>>,
    /// After output projection (pre-dropout).
    pub proj: Vec<Vec<f64>>,
    /// Inverted-dropout scale per element (`None` in eval mode).
    pub mask: Option<Vec<Vec<f64>>>,
    /// Residual sum feeding layer norm.
    pub resid: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Normalized activations before gain/shift.
    pub xhat: Vec<Vec<f64>>,
    /// Layer output (post layer norm).
    pub output: Vec<Vec<f64>>,
}

/// Cached forward pass over the whole graph.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Attention neighborhoods: neighbor indices plus the node itself when
    /// self-loops are on, ascending.
    pub neighborhoods: Vec<Vec<usize>>,
    /// Type-projected inputs, n × HIDDEN.
    pub h0: Vec<Vec<f64>>,
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Final-layer embeddings, n × HIDDEN.
    pub fn final_h(&self) -> &[Vec<f64>] {
        &self.layers.last().expect("at least one layer").output
    }
}

const DROPOUT_STREAM: u64 = 0x44524f50; // "DROP"

fn check_finite(rows: &[Vec<f64>], stage: &'static str) -> Result<(), EncoderError> {
    for row in rows {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite { stage });
        }
    }
    Ok(())
}

/// Run the encoder and keep every intermediate needed for backprop.
///
/// Dropout (train mode only) draws a fixed-order mask stream from `seed`, so
/// the pass is a deterministic function of (graph, params, mode, seed).
pub fn forward_cached(
    graph: &HeteroGraph,
    params: &EncoderParams,
    mode: Mode,
    seed: u64,
) -> Result<ForwardCache, EncoderError> {
    params.validate()?;
    let n = graph.node_count();
    let keep = 1.0 - params.dropout;

    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut ids = graph.neighbor_indices(i).to_vec();
            if graph.self_loops() && !ids.contains(&i) {
                ids.push(i);
                ids.sort_unstable();
            }
            ids
        })
        .collect();

    let mut h0: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let lin = params.input_for(graph.node_kind(i));
        let mut h = lin.weight.matvec(graph.feature(i));
        linalg::axpy(&mut h, &lin.bias, 1.0);
        h0.push(h);
    }
    check_finite(&h0, "input projection")?;

    let mut dropout_stream = rng::substream(seed, DROPOUT_STREAM);
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut h = h0.clone();

    for layer in &params.layers {
        let input = h;

        // Per-head projections for every node.
        let project = |mats: &[linalg::Mat]| -> Vec<Vec<Vec<f64>>> {
            mats.iter()
                .map(|m| input.iter().map(|hi| m.matvec(hi)).collect())
                .collect()
        };
        let q = project(&layer.query);
        let k = project(&layer.key);
        let v = project(&layer.value);

        // Scaled dot-product attention over each node's neighborhood.
        let scale = 1.0 / num::sqrt(HEAD_DIM as f64);
        let mut attn: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); NUM_HEADS];
        let mut msg: Vec<Vec<f64>> = vec![vec![0.0; HIDDEN_DIM]; n];
        for (m, attn_m) in attn.iter_mut().enumerate() {
            for i in 0..n {
                let neigh = &neighborhoods[i];
                let mut logits: Vec<f64> = neigh
                    .iter()
                    .map(|&j| linalg::dot(&q[m][i], &k[m][j]) * scale)
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for e in &mut logits {
                    *e = num::exp(*e - max);
                    total += *e;
                }
                for e in &mut logits {
                    *e /= total;
                }
                let out = &mut msg[i][m * HEAD_DIM..(m + 1) * HEAD_DIM];
                for (jj, &j) in neigh.iter().enumerate() {
                    linalg::axpy(out, &v[m][j], logits[jj]);
                }
                attn_m.push(logits);
            }
        }

        // Output projection, dropout, residual, layer norm.
        let mut proj: Vec<Vec<f64>> = Vec::with_capacity(n);
        for msg_i in &msg {
            let mut p = layer.output.weight.matvec(msg_i);
            linalg::axpy(&mut p, &layer.output.bias, 1.0);
            proj.push(p);
        }

        let mask = match mode {
            Mode::Eval => None,
            Mode::Train => {
                let mut mask = vec![vec![0.0; HIDDEN_DIM]; n];
                for row in mask.iter_mut() {
                    for cell in row.iter_mut() {
                        let u: f64 = rand::Rng::random(&mut dropout_stream);
                        *cell = if u < keep { 1.0 / keep } else { 0.0 };
                    }
                }
                Some(mask)
            }
        };

        let mut resid: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = input[i].clone();
            match &mask {
                Some(mask) => {
                    for d in 0..HIDDEN_DIM {
                        r[d] += proj[i][d] * mask[i][d];
                    }
                }
                None => linalg::axpy(&mut r, &proj[i], 1.0),
            }
            resid.push(r);
        }

        let mut mean = vec![0.0; n];
        let mut inv_std = vec![0.0; n];
        let mut xhat: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut output: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mu = resid[i].iter().sum::<f64>() / HIDDEN_DIM as f64;
            let var = resid[i].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / HIDDEN_DIM as f64;
            let istd = 1.0 / num::sqrt(var + LAYER_NORM_EPS);
            let xh: Vec<f64> = resid[i].iter().map(|x| (x - mu) * istd).collect();
            let out: Vec<f64> = xh
                .iter()
                .zip(layer.norm_gain.iter().zip(layer.norm_shift.iter()))
                .map(|(x, (g, b))| x * g + b)
                .collect();
            mean[i] = mu;
            inv_std[i] = istd;
            xhat.push(xh);
            output.push(out);
        }
        check_finite(&output, "layer output")?;

        h = output.clone();
        layers.push(LayerCache {
            input,
            q,
            k,
            v,
            attn,
            msg,
            proj,
            mask,
            resid,
            mean,
            inv_std,
            xhat,
            output,
        });
    }

    Ok(ForwardCache { neighborhoods, h0, layers })
}

/// Run the encoder and return final embeddings keyed by node.
pub fn forward(
    graph: &HeteroGraph,
    params: &EncoderParams,
    mode: Mode,
    seed: u64,
) -> Result<NodeEmbeddings, EncoderError> {
    let cache = forward_cached(graph, params, mode, seed)?;
    let mut entries = BTreeMap::new();
    for (i, node) in graph.nodes().iter().enumerate() {
        entries.insert(node.clone(), cache.final_h()[i].clone());
    }
    NodeEmbeddings::new(graph, entries)
}
