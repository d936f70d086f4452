//! Contrastive objective, negative sampling, and the embedding AUC sanity
//! check.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{HeteroGraph, NodeRef};
use crate::linalg;
use crate::num;
use crate::rng;

use super::{EncoderError, NodeEmbeddings, SupervisionSet};

fn cosine_checked(u: &[f64], v: &[f64]) -> Result<f64, EncoderError> {
    let nu = linalg::norm(u);
    let nv = linalg::norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(EncoderError::ZeroVector);
    }
    Ok(linalg::dot(u, v) / (nu * nv))
}

/// InfoNCE for one anchor/positive pair against sampled negatives, in
/// log-sum-exp form:
///
/// `−log( exp(cos(a,p)/τ) / (exp(cos(a,p)/τ) + Σ exp(cos(a,nᵢ)/τ)) )`
///
/// Always ≥ 0; reaches 0 only in the unattainable limit of infinitely
/// separated similarities.
pub fn infonce_loss(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<f64, EncoderError> {
    if !(tau > 0.0) {
        return Err(EncoderError::InvalidTau(tau));
    }
    if negatives.is_empty() {
        return Err(EncoderError::NoNegatives);
    }
    let z_pos = cosine_checked(anchor, positive)? / tau;
    let mut z = vec![z_pos];
    for neg in negatives {
        z.push(cosine_checked(anchor, neg)? / tau);
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + num::ln(z.iter().map(|zi| num::exp(zi - max)).sum::<f64>());
    Ok(lse - z_pos)
}

/// One training batch as node indices: (anchor, positive, negatives).
#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize, Vec<usize>)>,
}

/// d(cosine)/du given both vectors and their cosine.
fn cosine_grad_u(u: &[f64], v: &[f64], cos: f64) -> Vec<f64> {
    let nu = linalg::norm(u);
    let nv = linalg::norm(v);
    let inv = 1.0 / (nu * nv);
    let self_term = cos / (nu * nu);
    u.iter()
        .zip(v.iter())
        .map(|(ui, vi)| vi * inv - ui * self_term)
        .collect()
}

/// Mean InfoNCE over a batch plus its gradient w.r.t. the final embeddings.
///
/// Returns (mean loss, dL/d(final_h)) where the gradient rows align with
/// `final_h` and untouched nodes stay zero.
pub fn batch_loss_and_grad(
    final_h: &[Vec<f64>],
    batch: &PairBatch,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>), EncoderError> {
    if !(tau > 0.0) {
        return Err(EncoderError::InvalidTau(tau));
    }
    if batch.pairs.is_empty() {
        return Err(EncoderError::EmptySupervision);
    }
    let n = final_h.len();
    let dim = final_h.first().map_or(0, Vec::len);
    let mut dfinal = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let batch_scale = 1.0 / batch.pairs.len() as f64;

    for (anchor, positive, negatives) in &batch.pairs {
        if negatives.is_empty() {
            return Err(EncoderError::NoNegatives);
        }
        let a = &final_h[*anchor];
        // Candidate list: positive first, then negatives.
        let mut candidates = vec![*positive];
        candidates.extend_from_slice(negatives);

        let mut cos = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            cos.push(cosine_checked(a, &final_h[c])?);
        }
        let z: Vec<f64> = cos.iter().map(|c| c / tau).collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|zi| num::exp(zi - max)).collect();
        let denom: f64 = exps.iter().sum();
        let lse = max + num::ln(denom);
        total += lse - z[0];

        // dL/dz_i = softmax_i − [i == positive]; dz/dcos = 1/τ.
        for (idx, &c) in candidates.iter().enumerate() {
            let mut dz = exps[idx] / denom;
            if idx == 0 {
                dz -= 1.0;
            }
            let dcos = dz / tau * batch_scale;
            if dcos == 0.0 {
                continue;
            }
            let u = a;
            let v = &final_h[c];
            let gu = cosine_grad_u(u, v, cos[idx]);
            let gv = cosine_grad_u(v, u, cos[idx]);
            linalg::axpy(&mut dfinal[*anchor], &gu, dcos);
            linalg::axpy(&mut dfinal[c], &gv, dcos);
        }
    }

    Ok((total * batch_scale, dfinal))
}

const NEG_STREAM: u64 = 0x4e454753; // "NEGS"

/// Sample up to `k` negatives for a positive (problem, strategy) pair.
///
/// Same-category negatives of the anchor problem come first, topped up from
/// the global negative pool; the positive itself is never included. Both
/// draws are deterministic given the seed. Errors only when no negative
/// exists anywhere.
pub fn sample_negatives(
    positive_pair: (&str, &str),
    supervision: &SupervisionSet,
    graph: &HeteroGraph,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, EncoderError> {
    if k == 0 {
        return Err(EncoderError::InvalidConfig("k must be at least 1"));
    }
    let (problem_id, strategy_id) = positive_pair;
    let template = &graph
        .strategy_meta(strategy_id)
        .ok_or_else(|| EncoderError::UnknownPairNode(strategy_id.into()))?
        .template_id;

    let mut same_category: Vec<&String> = supervision
        .negatives_of(problem_id)
        .iter()
        .filter(|sid| sid.as_str() != strategy_id)
        .filter(|sid| {
            graph
                .strategy_meta(sid)
                .is_some_and(|meta| &meta.template_id == template)
        })
        .collect();

    let mut stream = rng::substream(seed, NEG_STREAM);
    rng::shuffle(&mut same_category, &mut stream);
    let mut chosen: Vec<String> = same_category.into_iter().take(k).cloned().collect();

    if chosen.len() < k {
        let already: BTreeSet<&str> = chosen.iter().map(String::as_str).collect();
        let mut pool: Vec<String> = supervision
            .global_negative_pool()
            .into_iter()
            .filter(|sid| sid != strategy_id && !already.contains(sid.as_str()))
            .collect();
        rng::shuffle(&mut pool, &mut stream);
        let need = k - chosen.len();
        chosen.extend(pool.into_iter().take(need));
    }

    if chosen.is_empty() {
        return Err(EncoderError::NoGlobalNegatives);
    }
    Ok(chosen)
}

/// AUC of cosine(h_problem, h_strategy) as a score separating positive from
/// negative pairs; ties contribute 0.5. Computed by rank-sum with averaged
/// tie ranks.
pub fn embedding_auc(
    embeddings: &NodeEmbeddings,
    heldout: &[(String, String, bool)],
) -> Result<f64, EncoderError> {
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(heldout.len());
    for (pid, sid, label) in heldout {
        let hp = embeddings.require(&NodeRef::problem(pid.clone()))?;
        let hs = embeddings.require(&NodeRef::strategy(sid.clone()))?;
        scored.push((cosine_checked(hp, hs)?, *label));
    }
    let positives = scored.iter().filter(|(_, l)| *l).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EncoderError::SingleClass);
    }

    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    // Average ranks across tied scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &scored[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64);
    Ok(auc)
}

#[cfg(test)]
mod tests {
    use super::super::testgraph::{twelve_node_graph, twelve_node_supervision};
    use super::*;
    use crate::graph::NodeRef;
    use alloc::collections::BTreeMap;
    use alloc::format;
    use alloc::string::ToString;

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn near_perfect_pair_has_near_zero_loss() {
        // Anchor equals positive, one orthogonal negative:
        // loss = ln(1 + e^(−1/τ)) ≈ 6.2e-7, evaluated independently via
        // ln_1p as the oracle route.
        let a = unit(8, 0);
        let neg = unit(8, 1);
        let loss = infonce_loss(&a, &a, &[&neg], 0.07).unwrap();
        let expected = num::ln_1p(num::exp(-1.0 / 0.07));
        assert!((loss - expected).abs() < 1e-12);
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn equal_similarities_give_ln_two() {
        let a = unit(4, 0);
        let p = unit(4, 1);
        let n = unit(4, 2);
        // cos(a,p) = cos(a,n) = 0.
        let loss = infonce_loss(&a, &p, &[&n], 0.07).unwrap();
        assert!((loss - num::ln(2.0)).abs() < 1e-12);
    }

    #[test]
    fn harder_negative_hurts_more() {
        let a = unit(4, 0);
        let p = unit(4, 1);
        let opposite = a.iter().map(|x| -x).collect::<Vec<f64>>();
        let base = infonce_loss(&a, &p, &[&unit(4, 2)], 0.07).unwrap();
        let with_easy = infonce_loss(&a, &p, &[&unit(4, 2), &opposite], 0.07).unwrap();
        let with_hard = infonce_loss(&a, &p, &[&unit(4, 2), &a], 0.07).unwrap();
        assert!(with_easy - base < with_hard - base);
        assert!(base >= 0.0 && with_easy >= 0.0 && with_hard >= 0.0);
    }

    #[test]
    fn zero_vector_input_errors() {
        let a = unit(4, 0);
        let z = vec![0.0; 4];
        assert_eq!(
            infonce_loss(&a, &z, &[&a], 0.07).unwrap_err(),
            EncoderError::ZeroVector
        );
    }

    #[test]
    fn missing_negatives_error() {
        let a = unit(4, 0);
        assert_eq!(
            infonce_loss(&a, &a, &[], 0.07).unwrap_err(),
            EncoderError::NoNegatives
        );
        assert_eq!(
            infonce_loss(&a, &a, &[&a], 0.0).unwrap_err(),
            EncoderError::InvalidTau(0.0)
        );
    }

    #[test]
    fn batch_loss_matches_single_pair_op() {
        let h = vec![unit(8, 0), unit(8, 1), unit(8, 2), unit(8, 3)];
        let batch = PairBatch {
            pairs: vec![(0, 1, vec![2, 3])],
        };
        let (loss, dfinal) = batch_loss_and_grad(&h, &batch, 0.5).unwrap();
        let negs: Vec<&[f64]> = vec![&h[2], &h[3]];
        let single = infonce_loss(&h[0], &h[1], &negs, 0.5).unwrap();
        assert!((loss - single).abs() < 1e-15);
        // The positive is pulled toward the anchor: gradient is nonzero.
        assert!(dfinal[1].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn batch_gradient_matches_finite_differences_on_embeddings() {
        // FD oracle directly on the embedding entries.
        let mut h = vec![
            vec![0.9, 0.1, -0.3, 0.5],
            vec![0.7, -0.2, 0.4, 0.1],
            vec![-0.5, 0.8, 0.2, -0.1],
            vec![0.2, 0.3, -0.7, 0.6],
        ];
        let batch = PairBatch {
            pairs: vec![(0, 1, vec![2, 3]), (2, 3, vec![0])],
        };
        let (_, grad) = batch_loss_and_grad(&h, &batch, 0.3).unwrap();
        let eps = 1e-6;
        for i in 0..h.len() {
            for d in 0..4 {
                let orig = h[i][d];
                h[i][d] = orig + eps;
                let up = batch_loss_and_grad(&h, &batch, 0.3).unwrap().0;
                h[i][d] = orig - eps;
                let down = batch_loss_and_grad(&h, &batch, 0.3).unwrap().0;
                h[i][d] = orig;
                let fd = (up - down) / (2.0 * eps);
                assert!(
                    (grad[i][d] - fd).abs() < 1e-8,
                    "node {i} dim {d}: analytic {} vs fd {fd}",
                    grad[i][d]
                );
            }
        }
    }

    fn category_fixture() -> (crate::graph::HeteroGraph, SupervisionSet) {
        use crate::corpus::{Corpus, Origin, Problem, Source, Split, StrategyInstance, Subject};
        use crate::embedding::{EmbeddingTable, TableKind, EMBEDDING_DIM};
        use crate::taxonomy::Taxonomy;

        let problem = |id: &str| Problem {
            id: id.into(),
            text: format!("problem {id}"),
            subject: Subject::Combinatorics,
            difficulty: 3,
            origin: Origin::Synthetic,
            split: Some(Split::Train),
        };
        let spec: [(&str, &str, Source, &str); 6] = [
            ("sa", "p", Source::Human, "pigeonhole"),
            ("sb", "p", Source::Human, "pigeonhole"),
            ("sc", "p", Source::Model, "pigeonhole"),
            ("sd", "p", Source::Model, "bijection"),
            ("se", "q", Source::Human, "invariant"),
            ("sf", "q", Source::Model, "invariant"),
        ];
        let strategies: Vec<StrategyInstance> = spec
            .iter()
            .map(|(id, pid, source, template)| StrategyInstance {
                id: (*id).into(),
                problem_id: (*pid).into(),
                source: *source,
                text: format!("{template} via {id}"),
                template_id: (*template).into(),
            })
            .collect();
        let basis = |i: usize| {
            let mut v = vec![0.0; EMBEDDING_DIM];
            v[i] = 1.0;
            v
        };
        let pt = EmbeddingTable::from_entries(
            TableKind::Problem,
            [("p".to_string(), basis(0)), ("q".to_string(), basis(1))],
        )
        .unwrap();
        let st = EmbeddingTable::from_entries(
            TableKind::Strategy,
            spec.iter().enumerate().map(|(i, (id, ..))| ((*id).to_string(), basis(i + 10))),
        )
        .unwrap();
        let corpus = Corpus::new(
            vec![problem("p"), problem("q")],
            vec![],
            strategies,
            vec![],
            vec![],
            Taxonomy::canonical(),
        )
        .unwrap();
        let graph = crate::graph::build_graph(&corpus, &pt, &st, &Taxonomy::canonical()).unwrap();
        let supervision = SupervisionSet::new(
            vec![("p".into(), "sa".into())],
            BTreeMap::from([
                ("p".into(), vec!["sb".into(), "sc".into(), "sd".into()]),
                ("q".into(), vec!["se".into(), "sf".into()]),
            ]),
        )
        .unwrap();
        (graph, supervision)
    }

    #[test]
    fn negatives_prefer_same_category() {
        let (g, sup) = category_fixture();
        // sa is pigeonhole; p's same-category negatives are sb and sc.
        let negs = sample_negatives(("p", "sa"), &sup, &g, 2, 7).unwrap();
        let got: BTreeSet<&str> = negs.iter().map(String::as_str).collect();
        assert_eq!(got, BTreeSet::from(["sb", "sc"]));
    }

    #[test]
    fn negatives_top_up_after_same_category_is_exhausted() {
        let (g, sup) = category_fixture();
        let negs = sample_negatives(("p", "sa"), &sup, &g, 4, 7).unwrap();
        assert_eq!(negs.len(), 4);
        let got: BTreeSet<&str> = negs.iter().map(String::as_str).collect();
        assert!(got.contains("sb") && got.contains("sc"), "{got:?}");
        let extras: Vec<&&str> = got
            .iter()
            .filter(|s| !["sb", "sc"].contains(*s))
            .collect();
        assert_eq!(extras.len(), 2);
        for e in extras {
            assert!(["sd", "se", "sf"].contains(e));
        }
    }

    #[test]
    fn negatives_top_up_from_global_pool() {
        let g = twelve_node_graph(1);
        let sup = twelve_node_supervision();
        // k larger than what exists for one problem: global pool tops up
        // with odd strategies negative elsewhere.
        let negs = sample_negatives(("p0", "s0"), &sup, &g, 5, 7).unwrap();
        assert!(negs.len() <= 5);
        assert!(!negs.contains(&"s0".to_string()), "never the positive");
        let unique: BTreeSet<&String> = negs.iter().collect();
        assert_eq!(unique.len(), negs.len(), "no duplicates");
    }

    #[test]
    fn negatives_deterministic_given_seed() {
        let g = twelve_node_graph(1);
        let sup = twelve_node_supervision();
        let a = sample_negatives(("p1", "s1"), &sup, &g, 3, 11).unwrap();
        let b = sample_negatives(("p1", "s1"), &sup, &g, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_negatives_anywhere_is_an_error() {
        let g = twelve_node_graph(1);
        let sup = SupervisionSet::new(vec![("p0".into(), "s0".into())], BTreeMap::new()).unwrap();
        assert_eq!(
            sample_negatives(("p0", "s0"), &sup, &g, 10, 1).unwrap_err(),
            EncoderError::NoGlobalNegatives
        );
    }

    fn toy_embeddings(scores: &[(usize, f64)]) -> (NodeEmbeddings, Vec<(String, String, bool)>) {
        // One problem at e0; strategies at angle acos(score) from it in 2D.
        let mut entries = BTreeMap::new();
        let mut dim0 = vec![0.0; 8];
        dim0[0] = 1.0;
        entries.insert(NodeRef::problem("p"), dim0);
        for (i, (_, score)) in scores.iter().enumerate() {
            let mut v = vec![0.0; 8];
            v[0] = *score;
            v[1] = num::sqrt(1.0 - score * score);
            entries.insert(NodeRef::strategy(format!("s{i}")), v);
        }
        let heldout = scores
            .iter()
            .enumerate()
            .map(|(i, (label, _))| ("p".to_string(), format!("s{i}"), *label == 1))
            .collect();
        (NodeEmbeddings::from_entries(entries), heldout)
    }

    #[test]
    fn auc_is_one_for_perfect_separation() {
        let (e, h) = toy_embeddings(&[(1, 0.9), (1, 0.8), (0, 0.2), (0, 0.1)]);
        assert_eq!(embedding_auc(&e, &h).unwrap(), 1.0);
    }

    #[test]
    fn auc_is_half_when_all_scores_tie() {
        let (e, h) = toy_embeddings(&[(1, 0.5), (0, 0.5), (1, 0.5), (0, 0.5)]);
        assert!((embedding_auc(&e, &h).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_mixed_case() {
        let spec = [(1, 0.9), (0, 0.7), (1, 0.6), (0, 0.2)];
        let (e, h) = toy_embeddings(&spec);
        // Brute-force O(P·N) oracle over the planted scores.
        let mut wins = 0.0;
        let mut total = 0.0;
        for (lp, sp) in &spec {
            if *lp != 1 {
                continue;
            }
            for (ln, sn) in &spec {
                if *ln != 0 {
                    continue;
                }
                total += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        let oracle = wins / total;
        assert!((embedding_auc(&e, &h).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn auc_single_class_errors() {
        let (e, h) = toy_embeddings(&[(1, 0.9), (1, 0.8)]);
        assert_eq!(embedding_auc(&e, &h).unwrap_err(), EncoderError::SingleClass);
    }
}
