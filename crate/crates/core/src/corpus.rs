//! The paired human/model solution corpus.
//!
//! A corpus bundles problems, their paired solutions, the strategy instances
//! extracted from those solutions, and the guided-trial records used for
//! executability estimation. Construction validates every invariant up
//! front (referential integrity, difficulty range, the 1–5 instances per
//! problem/source cap); after that the corpus is immutable and safe to read
//! concurrently.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::taxonomy::{TemplateId, Taxonomy};

/// Problem subject area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Algebra,
    Geometry,
    NumberTheory,
    Combinatorics,
    Mixed,
}

/// Where a problem was sourced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    OmniMath,
    Harp,
    Synthetic,
}

/// Dataset split label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Whether a solution or strategy came from a human or the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Model,
}

impl Source {
    pub fn other(self) -> Source {
        match self {
            Source::Human => Source::Model,
            Source::Model => Source::Human,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub text: String,
    pub subject: Subject,
    pub difficulty: u8,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub problem_id: String,
    pub author_source: Source,
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyInstance {
    pub id: String,
    pub problem_id: String,
    pub source: Source,
    pub text: String,
    pub template_id: TemplateId,
}

/// Binary outcomes of repeated guided decoding trials for one
/// (problem, strategy) pair under one model and protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub problem_id: String,
    pub strategy_id: String,
    pub model_id: String,
    pub protocol_id: String,
    pub outcomes: Vec<u8>,
}

/// Fixed prompting and decoding configuration for trial collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub id: String,
    pub model_id: String,
    pub prompt_template_id: String,
    pub temperature: f64,
    pub max_context_tokens: u32,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.temperature >= 0.0) {
            return Err(CorpusError::InvalidProtocol {
                protocol_id: self.id.clone(),
            });
        }
        if self.max_context_tokens == 0 {
            return Err(CorpusError::InvalidProtocol {
                protocol_id: self.id.clone(),
            });
        }
        Ok(())
    }
}

pub const MAX_STRATEGIES_PER_SOURCE: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorpusError {
    #[error("duplicate problem id `{id}`")]
    DuplicateProblemId { id: String },
    #[error("duplicate strategy id `{id}`")]
    DuplicateStrategyId { id: String },
    #[error("problem `{problem_id}`: difficulty {difficulty} outside 1..=9")]
    InvalidDifficulty { problem_id: String, difficulty: u8 },
    #[error("{record} references unknown problem `{problem_id}`")]
    UnknownProblem { record: &'static str, problem_id: String },
    #[error("trial references unknown strategy `{strategy_id}`")]
    UnknownStrategy { strategy_id: String },
    #[error("trial references unknown protocol `{protocol_id}`")]
    UnknownProtocol { protocol_id: String },
    #[error("strategy `{strategy_id}` references unknown template `{template_id}`")]
    UnknownTemplate {
        strategy_id: String,
        template_id: TemplateId,
    },
    #[error("problem `{problem_id}`: more than one {author:?} solution")]
    DuplicateSolution { problem_id: String, author: Source },
    #[error("problem `{problem_id}`: {author:?} strategy count {count} exceeds the cap of {MAX_STRATEGIES_PER_SOURCE}")]
    TooManyStrategies {
        problem_id: String,
        author: Source,
        count: usize,
    },
    #[error("trial for (`{problem_id}`, `{strategy_id}`): outcome {value} is not 0 or 1")]
    InvalidOutcome {
        problem_id: String,
        strategy_id: String,
        value: u8,
    },
    #[error("invalid protocol config `{protocol_id}`")]
    InvalidProtocol { protocol_id: String },
    #[error("no strategies for source {0:?}")]
    NoStrategiesForSource(Source),
    #[error("split ratios must be non-negative and sum to 1")]
    InvalidRatios,
}

/// Validated, immutable corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    problems: Vec<Problem>,
    solutions: Vec<Solution>,
    strategies: Vec<StrategyInstance>,
    trials: Vec<TrialRecord>,
    protocols: Vec<ProtocolConfig>,
    taxonomy: Taxonomy,
}

impl Corpus {
    /// Validate all record-level and cross-record invariants and build the
    /// corpus. An empty record set is a valid (empty) corpus.
    ///
    /// When `protocols` is empty, trial `protocol_id`s are left unchecked;
    /// callers that ship a protocol table get full referential checking.
    pub fn new(
        problems: Vec<Problem>,
        solutions: Vec<Solution>,
        strategies: Vec<StrategyInstance>,
        trials: Vec<TrialRecord>,
        protocols: Vec<ProtocolConfig>,
        taxonomy: Taxonomy,
    ) -> Result<Self, CorpusError> {
        let mut problem_ids = BTreeSet::new();
        for p in &problems {
            if !(1..=9).contains(&p.difficulty) {
                return Err(CorpusError::InvalidDifficulty {
                    problem_id: p.id.clone(),
                    difficulty: p.difficulty,
                });
            }
            if !problem_ids.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateProblemId { id: p.id.clone() });
            }
        }

        let mut seen_solutions = BTreeSet::new();
        for s in &solutions {
            if !problem_ids.contains(s.problem_id.as_str()) {
                return Err(CorpusError::UnknownProblem {
                    record: "solution",
                    problem_id: s.problem_id.clone(),
                });
            }
            if !seen_solutions.insert((s.problem_id.as_str(), s.author_source)) {
                return Err(CorpusError::DuplicateSolution {
                    problem_id: s.problem_id.clone(),
                    author: s.author_source,
                });
            }
        }

        let mut strategy_ids = BTreeSet::new();
        let mut per_problem_source: BTreeMap<(&str, Source), usize> = BTreeMap::new();
        for s in &strategies {
            if !strategy_ids.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateStrategyId { id: s.id.clone() });
            }
            if !problem_ids.contains(s.problem_id.as_str()) {
                return Err(CorpusError::UnknownProblem {
                    record: "strategy",
                    problem_id: s.problem_id.clone(),
                });
            }
            if !taxonomy.contains(&s.template_id) {
                return Err(CorpusError::UnknownTemplate {
                    strategy_id: s.id.clone(),
                    template_id: s.template_id.clone(),
                });
            }
            *per_problem_source
                .entry((s.problem_id.as_str(), s.source))
                .or_insert(0) += 1;
        }
        for ((problem_id, source), count) in &per_problem_source {
            if *count > MAX_STRATEGIES_PER_SOURCE {
                return Err(CorpusError::TooManyStrategies {
                    problem_id: String::from(*problem_id),
                    author: *source,
                    count: *count,
                });
            }
        }

        for p in &protocols {
            p.validate()?;
        }
        let protocol_ids: BTreeSet<&str> = protocols.iter().map(|p| p.id.as_str()).collect();

        for t in &trials {
            if !problem_ids.contains(t.problem_id.as_str()) {
                return Err(CorpusError::UnknownProblem {
                    record: "trial",
                    problem_id: t.problem_id.clone(),
                });
            }
            if !strategy_ids.contains(t.strategy_id.as_str()) {
                return Err(CorpusError::UnknownStrategy {
                    strategy_id: t.strategy_id.clone(),
                });
            }
            if !protocols.is_empty() && !protocol_ids.contains(t.protocol_id.as_str()) {
                return Err(CorpusError::UnknownProtocol {
                    protocol_id: t.protocol_id.clone(),
                });
            }
            for &v in &t.outcomes {
                if v > 1 {
                    return Err(CorpusError::InvalidOutcome {
                        problem_id: t.problem_id.clone(),
                        strategy_id: t.strategy_id.clone(),
                        value: v,
                    });
                }
            }
        }

        Ok(Corpus {
            problems,
            solutions,
            strategies,
            trials,
            protocols,
            taxonomy,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn solutions(&self) -> &[Solution] {
        &self.solutions
    }

    pub fn strategies(&self) -> &[StrategyInstance] {
        &self.strategies
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn protocols(&self) -> &[ProtocolConfig] {
        &self.protocols
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn strategy(&self, id: &str) -> Option<&StrategyInstance> {
        self.strategies.iter().find(|s| s.id == id)
    }

    /// Strategy instances of one problem, optionally filtered by source.
    pub fn strategies_of(
        &self,
        problem_id: &str,
        source: Option<Source>,
    ) -> impl Iterator<Item = &StrategyInstance> {
        let pid: String = problem_id.into();
        self.strategies
            .iter()
            .filter(move |s| s.problem_id == pid && source.is_none_or(|src| s.source == src))
    }

    /// Problems carrying the given split label.
    pub fn problems_in_split(&self, split: Split) -> impl Iterator<Item = &Problem> {
        self.problems.iter().filter(move |p| p.split == Some(split))
    }
}

/// Per-problem-normalized usage frequency of each template for one source.
///
/// Within a problem, each of its `n` strategy instances contributes weight
/// `1/n` to its template, so every problem contributes equally regardless of
/// how many strategies its solution decomposed into. The per-problem weights
/// are then averaged over the problems that have strategies from `source`,
/// making the returned map sum to 1.
pub fn usage_stats(
    corpus: &Corpus,
    source: Source,
) -> Result<BTreeMap<TemplateId, f64>, CorpusError> {
    let mut per_problem: BTreeMap<&str, Vec<&TemplateId>> = BTreeMap::new();
    for s in corpus.strategies() {
        if s.source == source {
            per_problem
                .entry(s.problem_id.as_str())
                .or_default()
                .push(&s.template_id);
        }
    }
    if per_problem.is_empty() {
        return Err(CorpusError::NoStrategiesForSource(source));
    }
    let mut totals: BTreeMap<TemplateId, f64> = BTreeMap::new();
    let problem_count = per_problem.len() as f64;
    for templates in per_problem.values() {
        let weight = 1.0 / templates.len() as f64;
        for t in templates {
            *totals.entry((*t).clone()).or_insert(0.0) += weight;
        }
    }
    for v in totals.values_mut() {
        *v /= problem_count;
    }
    Ok(totals)
}

/// Human-minus-model usage divergence per template. Values sum to zero;
/// swapping the sources negates the map elementwise.
pub fn usage_divergence(corpus: &Corpus) -> Result<BTreeMap<TemplateId, f64>, CorpusError> {
    let human = usage_stats(corpus, Source::Human)?;
    let model = usage_stats(corpus, Source::Model)?;
    let mut keys: BTreeSet<&TemplateId> = human.keys().collect();
    keys.extend(model.keys());
    Ok(keys
        .into_iter()
        .map(|k| {
            let h = human.get(k).copied().unwrap_or(0.0);
            let m = model.get(k).copied().unwrap_or(0.0);
            (k.clone(), h - m)
        })
        .collect())
}

/// Split sizes by largest-remainder apportionment: floor of each quota, then
/// leftover slots to the largest fractional remainders (ties to the earlier
/// split).
pub fn split_sizes(total: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3], CorpusError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(CorpusError::InvalidRatios);
    }
    let sum: f64 = r.iter().sum();
    if crate::num::abs(sum - 1.0) > 1e-9 {
        return Err(CorpusError::InvalidRatios);
    }
    let quotas: Vec<f64> = r.iter().map(|x| x * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| crate::num::floor(*q) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest remainder first; equal remainders resolved by split order.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        sizes[order[i % 3]] += 1;
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Assign every problem a train/validation/test label.
///
/// Deterministic given the seed: problem ids are sorted, shuffled with a
/// seeded stream, and cut into the largest-remainder sizes. Re-running with
/// the same seed reproduces the identical assignment; any prior labels are
/// overwritten.
pub fn split_corpus(
    mut corpus: Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Corpus, CorpusError> {
    const SPLIT_STREAM: u64 = 0x53504c4954; // "SPLIT"
    let sizes = split_sizes(corpus.problems.len(), ratios)?;
    let mut ids: Vec<String> = corpus.problems.iter().map(|p| p.id.clone()).collect();
    ids.sort_unstable();
    let mut stream = rng::substream(seed, SPLIT_STREAM);
    rng::shuffle(&mut ids, &mut stream);

    let mut label: BTreeMap<&str, Split> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let split = if i < sizes[0] {
            Split::Train
        } else if i < sizes[0] + sizes[1] {
            Split::Validation
        } else {
            Split::Test
        };
        label.insert(id.as_str(), split);
    }
    let label: BTreeMap<String, Split> = label
        .into_iter()
        .map(|(k, v)| (String::from(k), v))
        .collect();
    for p in &mut corpus.problems {
        p.split = Some(label[p.id.as_str()]);
    }
    Ok(corpus)
}
