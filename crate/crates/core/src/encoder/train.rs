//! Contrastive training of the encoder and the finite-difference gradient
//! check.

use alloc::vec::Vec;

use rand::Rng;

use crate::graph::{HeteroGraph, NodeRef};
use crate::num;
use crate::rng;

use super::{
    backward, batch_loss_and_grad, forward_cached, sample_negatives, EncoderError, EncoderParams,
    Mode, PairBatch, SupervisionSet,
};

/// Training hyperparameters. Defaults follow the fixed protocol used
/// everywhere in this system: 50 epochs, Adam at 1e-3, 32 positive pairs per
/// step, τ = 0.07, K = 10 negatives per positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub tau: f64,
    pub negatives_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-3,
            batch: 32,
            tau: 0.07,
            negatives_k: 10,
            seed: 0,
        }
    }
}

/// First-order adaptive-moment optimizer over the flattened parameters
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8, bias-corrected).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - libm_pow(self.beta1, self.t);
        let bc2 = 1.0 - libm_pow(self.beta2, self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (num::sqrt(vhat) + self.eps);
        }
    }
}

fn libm_pow(base: f64, exp: u64) -> f64 {
    // Integer exponent by squaring; avoids a powf shim for one call site.
    let mut result = 1.0;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result *= b;
        }
        b *= b;
        e >>= 1;
    }
    result
}

const SHUFFLE_STREAM: u64 = 0x53485546; // "SHUF"
const PAIR_NEG_STREAM: u64 = 0x504e4547; // "PNEG"
const DROP_SEED_STREAM: u64 = 0x44535344; // "DSSD"

fn pair_indices(
    graph: &HeteroGraph,
    problem_id: &str,
    strategy_id: &str,
) -> Result<(usize, usize), EncoderError> {
    let a = graph
        .node_index(&NodeRef::problem(problem_id))
        .ok_or_else(|| EncoderError::UnknownPairNode(problem_id.into()))?;
    let p = graph
        .node_index(&NodeRef::strategy(strategy_id))
        .ok_or_else(|| EncoderError::UnknownPairNode(strategy_id.into()))?;
    Ok((a, p))
}

fn build_batch(
    graph: &HeteroGraph,
    supervision: &SupervisionSet,
    pair_ids: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<PairBatch, EncoderError> {
    let mut pairs = Vec::with_capacity(pair_ids.len());
    for &pi in pair_ids {
        let (problem_id, strategy_id) = &supervision.positives()[pi];
        let (a, p) = pair_indices(graph, problem_id, strategy_id)?;
        let neg_seed = rng::derive_seed(
            rng::derive_seed(config.seed, PAIR_NEG_STREAM),
            ((epoch as u64) << 32) | pi as u64,
        );
        let negatives = sample_negatives(
            (problem_id, strategy_id),
            supervision,
            graph,
            config.negatives_k,
            neg_seed,
        )?;
        let mut neg_idx = Vec::with_capacity(negatives.len());
        for sid in &negatives {
            neg_idx.push(
                graph
                    .node_index(&NodeRef::strategy(sid.clone()))
                    .ok_or_else(|| EncoderError::UnknownPairNode(sid.clone()))?,
            );
        }
        pairs.push((a, p, neg_idx));
    }
    Ok(PairBatch { pairs })
}

/// Train the encoder with mean-batch InfoNCE under Adam.
///
/// Positives are reshuffled every epoch from the seed; negative sampling and
/// dropout derive their own substreams, so two runs with the same seed and
/// config produce bitwise-identical parameters and loss curves. Returns the
/// final parameters and the per-epoch mean loss.
pub fn train(
    graph: &HeteroGraph,
    supervision: &SupervisionSet,
    config: &TrainConfig,
) -> Result<(EncoderParams, Vec<f64>), EncoderError> {
    if supervision.is_empty() {
        return Err(EncoderError::EmptySupervision);
    }
    if config.batch == 0 {
        return Err(EncoderError::InvalidConfig("batch must be at least 1"));
    }
    if !(config.tau > 0.0) {
        return Err(EncoderError::InvalidTau(config.tau));
    }

    let mut params = super::init_params(config.seed);
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    let n_pairs = supervision.positives().len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_pairs).collect();
        let mut shuffle_stream = rng::substream(
            rng::derive_seed(config.seed, SHUFFLE_STREAM),
            epoch as u64,
        );
        rng::shuffle(&mut order, &mut shuffle_stream);

        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(config.batch).enumerate() {
            let batch = build_batch(graph, supervision, chunk, config, epoch)?;
            let drop_seed = rng::derive_seed(
                rng::derive_seed(config.seed, DROP_SEED_STREAM),
                ((epoch as u64) << 32) | step as u64,
            );
            let cache = forward_cached(graph, &params, Mode::Train, drop_seed)?;
            let (loss, dfinal) = batch_loss_and_grad(cache.final_h(), &batch, config.tau)?;
            if !loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss { epoch, batch: step });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = backward(graph, &params, &cache, &dfinal);
            adam.step(&mut flat, &grads.to_flat(), config.lr);
            params.set_from_flat(&flat);
        }
        epoch_losses.push(loss_sum / n_pairs as f64);
    }

    Ok((params, epoch_losses))
}

/// Compare analytic gradients of one InfoNCE batch against central finite
/// differences on a random parameter subset.
///
/// Returns the max relative error `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)`.
/// The batch is the first up-to-`batch` positives with seeded negatives; the
/// dropout stream is held fixed across evaluations so train mode checks the
/// exact function being differentiated.
pub fn grad_check(
    graph: &HeteroGraph,
    params: &EncoderParams,
    supervision: &SupervisionSet,
    epsilon: f64,
    subset: usize,
    mode: Mode,
    seed: u64,
) -> Result<f64, EncoderError> {
    if subset == 0 {
        return Err(EncoderError::EmptySubset);
    }
    if supervision.is_empty() {
        return Err(EncoderError::EmptySupervision);
    }
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let n_pairs = supervision.positives().len().min(config.batch);
    let pair_ids: Vec<usize> = (0..n_pairs).collect();
    let batch = build_batch(graph, supervision, &pair_ids, &config, 0)?;
    let drop_seed = rng::derive_seed(seed, DROP_SEED_STREAM);

    // Analytic gradient.
    let cache = forward_cached(graph, params, mode, drop_seed)?;
    let (_, dfinal) = batch_loss_and_grad(cache.final_h(), &batch, config.tau)?;
    let analytic = backward(graph, params, &cache, &dfinal).to_flat();

    // Parameter subset, without replacement.
    let total = analytic.len();
    let mut picks: Vec<usize>;
    if subset >= total {
        picks = (0..total).collect();
    } else {
        let mut stream = rng::substream(seed, 0x4743504b); // "GCPK"
        let mut seen = alloc::collections::BTreeSet::new();
        picks = Vec::with_capacity(subset);
        while picks.len() < subset {
            let i = stream.random_range(0..total);
            if seen.insert(i) {
                picks.push(i);
            }
        }
    }

    let mut flat = params.to_flat();
    let mut probe = params.clone();
    let eval = |flat: &[f64], probe: &mut EncoderParams| -> Result<f64, EncoderError> {
        probe.set_from_flat(flat);
        let cache = forward_cached(graph, probe, mode, drop_seed)?;
        Ok(batch_loss_and_grad(cache.final_h(), &batch, config.tau)?.0)
    };

    let mut max_rel = 0.0;
    for &i in &picks {
        let orig = flat[i];
        flat[i] = orig + epsilon;
        let up = eval(&flat, &mut probe)?;
        flat[i] = orig - epsilon;
        let down = eval(&flat, &mut probe)?;
        flat[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = num::abs(analytic[i]) + num::abs(numeric);
        let rel = num::abs(analytic[i] - numeric) / if denom > 1e-8 { denom } else { 1e-8 };
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
