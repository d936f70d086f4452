//! Synthetic corpora and graphs with planted executability structure.
//!
//! Two generators back the pipeline tests. `planted_graph` builds a small
//! heterogeneous graph whose positive and negative strategies are equally
//! correlated with their problems and differ only in an orthogonal source
//! component, so raw features carry no linearly visible label signal and
//! contrastive training has something real to learn. `generate_corpus`
//! builds a full corpus with source-dependent planted executability: every
//! problem's planted template appears in both sources' strategy lists, but
//! guidance succeeds only from the template's executable source, while
//! usage frequencies stay source-symmetric.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{
    split_corpus, Corpus, Origin, Problem, ProtocolConfig, Solution, Source, Split,
    StrategyInstance, TrialRecord,
};
use crate::embedding::{EmbeddingTable, TableKind, EMBEDDING_DIM};
use crate::encoder::SupervisionSet;
use crate::graph::{build_graph, HeteroGraph};
use crate::linalg;
use crate::rng::{self, DetRng};
use crate::taxonomy::{TemplateId, Taxonomy};

fn random_unit(stream: &mut DetRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng::standard_normal(stream)).collect();
    let n = linalg::norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

fn noisy_mix(parts: &[(&[f64], f64)], noise: f64, stream: &mut DetRng) -> Vec<f64> {
    let mut v = alloc::vec![0.0; EMBEDDING_DIM];
    for (dir, weight) in parts {
        linalg::axpy(&mut v, dir, *weight);
    }
    for x in &mut v {
        *x += noise * rng::standard_normal(stream);
    }
    let n = linalg::norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

// ---------------------------------------------------------------------------
// Planted-structure graph for encoder checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedGraphConfig {
    pub n_problems: usize,
    pub clusters: usize,
    pub positives_per_problem: usize,
    pub negatives_per_problem: usize,
    /// Weight of the orthogonal source direction in strategy features.
    pub source_component: f64,
    /// Gaussian feature noise scale.
    pub noise: f64,
    /// Fraction of labeled pairs held out from supervision for the AUC check.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedGraphConfig {
    fn default() -> Self {
        PlantedGraphConfig {
            n_problems: 60,
            clusters: 10,
            positives_per_problem: 3,
            negatives_per_problem: 3,
            source_component: 0.6,
            noise: 0.08,
            heldout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedGraph {
    pub graph: HeteroGraph,
    pub supervision: SupervisionSet,
    /// Held-out labeled (problem, strategy, is_positive) pairs.
    pub heldout: Vec<(String, String, bool)>,
}

const PLANTED_STREAM: u64 = 0x504c414e; // "PLAN"
const HOLDOUT_STREAM: u64 = 0x484f4c44; // "HOLD"

/// Build a planted-structure graph and its supervision split.
///
/// Problems sit near cluster directions. Each problem carries human-sourced
/// positive strategies and model-sourced negative strategies, both built
/// from the same cluster direction plus opposite source directions, so the
/// two classes are indistinguishable by their similarity to the problem at
/// initialization.
pub fn planted_graph(config: &PlantedGraphConfig) -> PlantedGraph {
    let taxonomy = Taxonomy::canonical();
    let mut stream = rng::substream(config.seed, PLANTED_STREAM);

    let cluster_dirs: Vec<Vec<f64>> = (0..config.clusters).map(|_| random_unit(&mut stream)).collect();
    let human_dir = random_unit(&mut stream);
    let model_dir = random_unit(&mut stream);

    let mut problems = Vec::new();
    let mut strategies = Vec::new();
    let mut problem_entries = Vec::new();
    let mut strategy_entries = Vec::new();
    let mut labeled: Vec<(String, String, bool)> = Vec::new();

    for i in 0..config.n_problems {
        let pid = format!("pg-p{i:03}");
        let cluster = i % config.clusters;
        let template = &taxonomy.templates()[cluster % taxonomy.templates().len()].id;
        problems.push(Problem {
            id: pid.clone(),
            text: format!("planted problem {i} in cluster {cluster}"),
            subject: crate::corpus::Subject::Mixed,
            difficulty: 5,
            origin: Origin::Synthetic,
            split: Some(Split::Train),
        });
        problem_entries.push((
            pid.clone(),
            noisy_mix(&[(&cluster_dirs[cluster], 1.0)], config.noise, &mut stream),
        ));

        for (source, dir, count, positive) in [
            (Source::Human, &human_dir, config.positives_per_problem, true),
            (Source::Model, &model_dir, config.negatives_per_problem, false),
        ] {
            for k in 0..count {
                let tag = if positive { "pos" } else { "neg" };
                let sid = format!("pg-s{i:03}-{tag}{k}");
                strategies.push(StrategyInstance {
                    id: sid.clone(),
                    problem_id: pid.clone(),
                    source,
                    text: format!("planted {tag} strategy {k} for problem {i}"),
                    template_id: template.clone(),
                });
                strategy_entries.push((
                    sid.clone(),
                    noisy_mix(
                        &[(&cluster_dirs[cluster], 1.0), (dir, config.source_component)],
                        config.noise,
                        &mut stream,
                    ),
                ));
                labeled.push((pid.clone(), sid, positive));
            }
        }
    }

    let problem_embeddings =
        EmbeddingTable::from_entries(TableKind::Problem, problem_entries).expect("valid entries");
    let strategy_embeddings =
        EmbeddingTable::from_entries(TableKind::Strategy, strategy_entries).expect("valid entries");
    let corpus = Corpus::new(
        problems,
        Vec::new(),
        strategies,
        Vec::new(),
        Vec::new(),
        taxonomy.clone(),
    )
    .expect("generator respects corpus invariants");
    let graph =
        build_graph(&corpus, &problem_embeddings, &strategy_embeddings, &taxonomy).expect("buildable");

    // Hold out a fraction of labeled pairs for the AUC sanity check.
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut holdout_stream = rng::substream(config.seed, HOLDOUT_STREAM);
    rng::shuffle(&mut order, &mut holdout_stream);
    let n_held = ((labeled.len() as f64) * config.heldout_fraction) as usize;
    let held_idx: alloc::collections::BTreeSet<usize> = order.into_iter().take(n_held).collect();

    let mut positives = Vec::new();
    let mut negatives: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut heldout = Vec::new();
    for (idx, (pid, sid, positive)) in labeled.into_iter().enumerate() {
        if held_idx.contains(&idx) {
            heldout.push((pid, sid, positive));
        } else if positive {
            positives.push((pid, sid));
        } else {
            negatives.entry(pid).or_default().push(sid);
        }
    }
    let supervision = SupervisionSet::new(positives, negatives).expect("disjoint by construction");

    PlantedGraph {
        graph,
        supervision,
        heldout,
    }
}

// ---------------------------------------------------------------------------
// Full synthetic corpus with planted executability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthCorpusConfig {
    pub n_problems: usize,
    /// Non-planted extra strategies per problem per source.
    pub extras_per_source: usize,
    /// Decoding trials recorded per (problem, strategy) pair.
    pub trials_per_pair: usize,
    /// Guided success probability for planted-executable pairs.
    pub hi: f64,
    /// Guided success probability otherwise.
    pub lo: f64,
    pub subject_component: f64,
    pub source_component: f64,
    pub noise: f64,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            n_problems: 240,
            extras_per_source: 2,
            trials_per_pair: 10,
            hi: 0.9,
            lo: 0.05,
            subject_component: 0.3,
            source_component: 0.45,
            noise: 0.15,
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

/// The generator's planted assignment, the oracle the pipeline is judged
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    planted: BTreeMap<String, TemplateId>,
    executable_source: BTreeMap<TemplateId, Source>,
    pub hi: f64,
    pub lo: f64,
}

impl GroundTruth {
    /// The one template planted as executable for a problem.
    pub fn planted_template(&self, problem_id: &str) -> Option<&TemplateId> {
        self.planted.get(problem_id)
    }

    /// Which source executes a template reliably.
    pub fn executable_source(&self, template: &str) -> Option<Source> {
        self.executable_source.get(template).copied()
    }

    /// Whether guidance with (template, source) is planted-executable for
    /// the problem.
    pub fn is_executable(&self, problem_id: &str, template: &str, source: Source) -> bool {
        self.planted.get(problem_id).is_some_and(|t| t == template)
            && self.executable_source(template) == Some(source)
    }

    /// Guided success probability for a (problem, template, source) triple.
    pub fn success_prob(&self, problem_id: &str, template: &str, source: Source) -> f64 {
        if self.is_executable(problem_id, template, source) {
            self.hi
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub problem_embeddings: EmbeddingTable,
    pub strategy_embeddings: EmbeddingTable,
    pub ground_truth: GroundTruth,
}

const CORPUS_STREAM: u64 = 0x434f5250; // "CORP"
const TRIAL_STREAM: u64 = 0x5452494c; // "TRIL"

pub const SYNTH_MODEL_ID: &str = "mock-solver-1";
pub const SYNTH_PROTOCOL_ID: &str = "default";

const SUBJECTS: [crate::corpus::Subject; 5] = [
    crate::corpus::Subject::Algebra,
    crate::corpus::Subject::Geometry,
    crate::corpus::Subject::NumberTheory,
    crate::corpus::Subject::Combinatorics,
    crate::corpus::Subject::Mixed,
];

fn strategy_text(template: &str, variant: usize) -> String {
    format!(
        "Apply {} reasoning to configuration {variant:03}",
        template.replace('_', " ")
    )
}

/// Generate a full corpus with planted executability, split labels, paired
/// solutions, trial records, and synthetic sentence embeddings.
///
/// Every template alternates its executable source (even-indexed templates
/// execute from human-sourced guidance, odd from model-sourced). Each
/// problem carries its planted template in both sources plus random extras;
/// trial outcomes are Bernoulli draws at `hi` for the planted-executable
/// pair and `lo` elsewhere. Deterministic given the seed.
pub fn generate_corpus(config: &SynthCorpusConfig) -> SynthCorpus {
    let taxonomy = Taxonomy::canonical();
    let templates: Vec<TemplateId> =
        taxonomy.templates().iter().map(|t| t.id.clone()).collect();
    let mut stream = rng::substream(config.seed, CORPUS_STREAM);

    let executable_source: BTreeMap<TemplateId, Source> = templates
        .iter()
        .enumerate()
        .map(|(i, t)| {
            (
                t.clone(),
                if i % 2 == 0 { Source::Human } else { Source::Model },
            )
        })
        .collect();

    let template_dirs: BTreeMap<&TemplateId, Vec<f64>> = templates
        .iter()
        .map(|t| (t, random_unit(&mut stream)))
        .collect();
    let subject_dirs: Vec<Vec<f64>> = (0..SUBJECTS.len()).map(|_| random_unit(&mut stream)).collect();
    let human_dir = random_unit(&mut stream);
    let model_dir = random_unit(&mut stream);
    let source_dir = |s: Source| match s {
        Source::Human => &human_dir,
        Source::Model => &model_dir,
    };

    let mut problems = Vec::new();
    let mut solutions = Vec::new();
    let mut strategies = Vec::new();
    let mut planted = BTreeMap::new();
    let mut problem_entries = Vec::new();
    let mut strategy_entries = Vec::new();
    let mut strategy_counter = 0usize;

    for i in 0..config.n_problems {
        let pid = format!("synth-p{i:04}");
        let subject_idx = i % SUBJECTS.len();
        let template = &templates[i % templates.len()];
        planted.insert(pid.clone(), template.clone());

        problems.push(Problem {
            id: pid.clone(),
            text: format!(
                "Synthetic {} problem {i:04} targeting {}",
                match SUBJECTS[subject_idx] {
                    crate::corpus::Subject::Algebra => "algebra",
                    crate::corpus::Subject::Geometry => "geometry",
                    crate::corpus::Subject::NumberTheory => "number theory",
                    crate::corpus::Subject::Combinatorics => "combinatorics",
                    crate::corpus::Subject::Mixed => "mixed",
                },
                template.replace('_', " ")
            ),
            subject: SUBJECTS[subject_idx],
            difficulty: (i % 9 + 1) as u8,
            origin: Origin::Synthetic,
            split: None,
        });
        problem_entries.push((
            pid.clone(),
            noisy_mix(
                &[
                    (&template_dirs[template], 1.0),
                    (&subject_dirs[subject_idx], config.subject_component),
                ],
                config.noise,
                &mut stream,
            ),
        ));
        for source in [Source::Human, Source::Model] {
            solutions.push(Solution {
                problem_id: pid.clone(),
                author_source: source,
                text: format!("{source:?} solution for problem {i:04}"),
                correct: true,
            });

            // The planted template appears in both sources; only one of them
            // can actually execute it.
            let mut picks = alloc::vec![template.clone()];
            for _ in 0..config.extras_per_source {
                loop {
                    let t = &templates[rand::Rng::random_range(&mut stream, 0..templates.len())];
                    if t != template && !picks.contains(t) {
                        picks.push(t.clone());
                        break;
                    }
                }
            }
            for t in picks {
                let sid = format!("synth-s{strategy_counter:05}");
                strategy_counter += 1;
                strategies.push(StrategyInstance {
                    id: sid.clone(),
                    problem_id: pid.clone(),
                    source,
                    text: strategy_text(&t, strategy_counter),
                    template_id: t.clone(),
                });
                strategy_entries.push((
                    sid,
                    noisy_mix(
                        &[
                            (&template_dirs[&t], 1.0),
                            (source_dir(source), config.source_component),
                        ],
                        config.noise,
                        &mut stream,
                    ),
                ));
            }
        }
    }

    let ground_truth = GroundTruth {
        planted,
        executable_source,
        hi: config.hi,
        lo: config.lo,
    };

    // Trial records: per (problem, own strategy) pair, an independent
    // Bernoulli stream keyed by the pair ids.
    let mut trials = Vec::new();
    for s in &strategies {
        let p = ground_truth.success_prob(&s.problem_id, &s.template_id, s.source);
        let tag = rng::hash_str(&s.problem_id) ^ rng::hash_str(&s.id).rotate_left(17) ^ TRIAL_STREAM;
        let mut trial_stream = rng::substream(config.seed, tag);
        let outcomes: Vec<u8> = (0..config.trials_per_pair)
            .map(|_| u8::from(rng::uniform(&mut trial_stream, 0.0, 1.0) < p))
            .collect();
        trials.push(TrialRecord {
            problem_id: s.problem_id.clone(),
            strategy_id: s.id.clone(),
            model_id: SYNTH_MODEL_ID.into(),
            protocol_id: SYNTH_PROTOCOL_ID.into(),
            outcomes,
        });
    }

    let protocols = alloc::vec![ProtocolConfig {
        id: SYNTH_PROTOCOL_ID.into(),
        model_id: SYNTH_MODEL_ID.into(),
        prompt_template_id: "guidance".into(),
        temperature: 0.7,
        max_context_tokens: 32_768,
    }];

    let corpus = Corpus::new(problems, solutions, strategies, trials, protocols, taxonomy)
        .expect("generator respects corpus invariants");
    let corpus = split_corpus(corpus, config.ratios, config.seed).expect("valid ratios");

    let problem_embeddings =
        EmbeddingTable::from_entries(TableKind::Problem, problem_entries).expect("valid entries");
    let strategy_embeddings =
        EmbeddingTable::from_entries(TableKind::Strategy, strategy_entries).expect("valid entries");

    SynthCorpus {
        corpus,
        problem_embeddings,
        strategy_embeddings,
        ground_truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{map_to_template, RuleTable};

    #[test]
    fn generation_is_deterministic() {
        let config = SynthCorpusConfig { n_problems: 20, ..Default::default() };
        let a = generate_corpus(&config);
        let b = generate_corpus(&config);
        assert_eq!(a.corpus.problems(), b.corpus.problems());
        assert_eq!(a.corpus.strategies(), b.corpus.strategies());
        assert_eq!(a.corpus.trials(), b.corpus.trials());
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn planted_template_appears_in_both_sources() {
        let config = SynthCorpusConfig { n_problems: 12, ..Default::default() };
        let out = generate_corpus(&config);
        for p in out.corpus.problems() {
            let planted = out.ground_truth.planted_template(&p.id).unwrap();
            for source in [Source::Human, Source::Model] {
                assert!(
                    out.corpus
                        .strategies_of(&p.id, Some(source))
                        .any(|s| &s.template_id == planted),
                    "{} missing planted template for {source:?}",
                    p.id
                );
            }
        }
    }

    #[test]
    fn trials_reflect_planted_success_probabilities() {
        let config = SynthCorpusConfig {
            n_problems: 60,
            trials_per_pair: 10,
            ..Default::default()
        };
        let out = generate_corpus(&config);
        let mut hi_rate = (0usize, 0usize);
        let mut lo_rate = (0usize, 0usize);
        for t in out.corpus.trials() {
            let s = out.corpus.strategy(&t.strategy_id).unwrap();
            let successes: usize = t.outcomes.iter().map(|&o| o as usize).sum();
            let bucket = if out.ground_truth.is_executable(&t.problem_id, &s.template_id, s.source)
            {
                &mut hi_rate
            } else {
                &mut lo_rate
            };
            bucket.0 += successes;
            bucket.1 += t.outcomes.len();
        }
        let hi = hi_rate.0 as f64 / hi_rate.1 as f64;
        let lo = lo_rate.0 as f64 / lo_rate.1 as f64;
        assert!((hi - 0.9).abs() < 0.07, "hi rate {hi}");
        assert!((lo - 0.05).abs() < 0.04, "lo rate {lo}");
    }

    #[test]
    fn generated_strategy_text_round_trips_through_the_rule_table() {
        let config = SynthCorpusConfig { n_problems: 60, ..Default::default() };
        let out = generate_corpus(&config);
        let rules = RuleTable::default_table(out.corpus.taxonomy());
        for s in out.corpus.strategies() {
            let mapped = map_to_template(&s.text, &rules).unwrap();
            assert_eq!(mapped, s.template_id, "text: {}", s.text);
        }
    }

    #[test]
    fn splits_cover_all_problems() {
        let config = SynthCorpusConfig { n_problems: 50, ..Default::default() };
        let out = generate_corpus(&config);
        assert!(out.corpus.problems().iter().all(|p| p.split.is_some()));
        let train = out.corpus.problems_in_split(Split::Train).count();
        assert_eq!(train, 40);
    }

    #[test]
    fn embeddings_cover_every_record() {
        let config = SynthCorpusConfig { n_problems: 15, ..Default::default() };
        let out = generate_corpus(&config);
        for p in out.corpus.problems() {
            assert!(out.problem_embeddings.get(&p.id).is_some());
        }
        for s in out.corpus.strategies() {
            assert!(out.strategy_embeddings.get(&s.id).is_some());
        }
    }

    #[test]
    fn planted_graph_builds_with_balanced_supervision() {
        let config = PlantedGraphConfig { seed: 3, ..Default::default() };
        let out = planted_graph(&config);
        assert!(out.graph.node_count() > config.n_problems);
        assert!(!out.supervision.is_empty());
        let held_pos = out.heldout.iter().filter(|(_, _, l)| *l).count();
        let held_neg = out.heldout.len() - held_pos;
        assert!(held_pos > 0 && held_neg > 0, "both classes held out");
    }

    #[test]
    fn planted_graph_is_deterministic() {
        let config = PlantedGraphConfig { seed: 9, ..Default::default() };
        let a = planted_graph(&config);
        let b = planted_graph(&config);
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.supervision, b.supervision);
        assert_eq!(a.heldout, b.heldout);
    }
}
