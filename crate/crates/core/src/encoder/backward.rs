//! Hand-written backward pass mirroring `forward_cached`.
//!
//! Gradients flow through layer norm, the residual branch, dropout, the
//! output projection, per-head attention (softmax over neighborhoods), and
//! finally the per-type input projections. Validated against central finite
//! differences by `grad_check`.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::HeteroGraph;
use crate::linalg;
use crate::num;

use super::{EncoderParams, ForwardCache, HEAD_DIM, HIDDEN_DIM, NUM_HEADS};

/// Backpropagate a gradient on the final embeddings into parameter space.
///
/// `dfinal` is dL/d(final-layer output), one row per node; rows for nodes
/// the loss does not touch are simply zero. Returns gradients shaped like
/// the parameters.
pub fn backward(
    graph: &HeteroGraph,
    params: &EncoderParams,
    cache: &ForwardCache,
    dfinal: &[Vec<f64>],
) -> EncoderParams {
    let n = graph.node_count();
    debug_assert_eq!(dfinal.len(), n);
    let mut grads = params.zeros_like();
    let scale = 1.0 / num::sqrt(HEAD_DIM as f64);

    // Gradient w.r.t. the current layer's output; starts at the loss.
    let mut d: Vec<Vec<f64>> = dfinal.to_vec();

    for (l, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let lg = &mut grads.layers[l];
        let inv_dim = 1.0 / HIDDEN_DIM as f64;

        // Layer norm: y = gain ⊙ xhat + shift.
        let mut d_resid: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let dy = &d[i];
            let xhat = &lc.xhat[i];
            let mut dxhat = vec![0.0; HIDDEN_DIM];
            for dim in 0..HIDDEN_DIM {
                lg.norm_gain[dim] += dy[dim] * xhat[dim];
                lg.norm_shift[dim] += dy[dim];
                dxhat[dim] = dy[dim] * layer.norm_gain[dim];
            }
            let m1: f64 = dxhat.iter().sum::<f64>() * inv_dim;
            let m2: f64 = dxhat.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() * inv_dim;
            let istd = lc.inv_std[i];
            let dr: Vec<f64> = (0..HIDDEN_DIM)
                .map(|dim| istd * (dxhat[dim] - m1 - xhat[dim] * m2))
                .collect();
            d_resid.push(dr);
        }

        // Residual: resid = input + dropout(proj). The input branch
        // accumulates into d_input; the projection branch continues down.
        let mut d_input: Vec<Vec<f64>> = d_resid.clone();
        let mut d_msg: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut dp = d_resid[i].clone();
            if let Some(mask) = &lc.mask {
                for dim in 0..HIDDEN_DIM {
                    dp[dim] *= mask[i][dim];
                }
            }
            // Output projection: proj = W_O · msg + b_O.
            lg.output.weight.add_outer(&dp, &lc.msg[i], 1.0);
            linalg::axpy(&mut lg.output.bias, &dp, 1.0);
            d_msg.push(layer.output.weight.matvec_t(&dp));
        }

        // Attention per head.
        for m in 0..NUM_HEADS {
            let mut dq: Vec<Vec<f64>> = vec![vec![0.0; HEAD_DIM]; n];
            let mut dk: Vec<Vec<f64>> = vec![vec![0.0; HEAD_DIM]; n];
            let mut dv: Vec<Vec<f64>> = vec![vec![0.0; HEAD_DIM]; n];
            for i in 0..n {
                let neigh = &cache.neighborhoods[i];
                let alpha = &lc.attn[m][i];
                let dmsg_m = &d_msg[i][m * HEAD_DIM..(m + 1) * HEAD_DIM];

                let mut dalpha = vec![0.0; neigh.len()];
                for (jj, &j) in neigh.iter().enumerate() {
                    dalpha[jj] = linalg::dot(dmsg_m, &lc.v[m][j]);
                    linalg::axpy(&mut dv[j], dmsg_m, alpha[jj]);
                }
                // Softmax backward: de = α ⊙ (dα − Σ α dα).
                let mix: f64 = alpha.iter().zip(dalpha.iter()).map(|(a, b)| a * b).sum();
                for (jj, &j) in neigh.iter().enumerate() {
                    let de = alpha[jj] * (dalpha[jj] - mix) * scale;
                    linalg::axpy(&mut dq[i], &lc.k[m][j], de);
                    linalg::axpy(&mut dk[j], &lc.q[m][i], de);
                }
            }
            // Projections: q_i = Q_m · input_i (and likewise k, v).
            for i in 0..n {
                lg.query[m].add_outer(&dq[i], &lc.input[i], 1.0);
                lg.key[m].add_outer(&dk[i], &lc.input[i], 1.0);
                lg.value[m].add_outer(&dv[i], &lc.input[i], 1.0);
                linalg::axpy(&mut d_input[i], &layer.query[m].matvec_t(&dq[i]), 1.0);
                linalg::axpy(&mut d_input[i], &layer.key[m].matvec_t(&dk[i]), 1.0);
                linalg::axpy(&mut d_input[i], &layer.value[m].matvec_t(&dv[i]), 1.0);
            }
        }

        d = d_input;
    }

    // Input projections: h0 = W_t · feature + b_t.
    for i in 0..n {
        let lin = grads.input_for_mut(graph.node_kind(i));
        lin.weight.add_outer(&d[i], graph.feature(i), 1.0);
        linalg::axpy(&mut lin.bias, &d[i], 1.0);
    }

    grads
}
