//! Solver/verifier abstraction and the trial-collection harness.
//!
//! `run_trials` assembles the guidance prompt, invokes a solver client for
//! each decoding trial, verifies each answer through the verification
//! prompt and parser, and records the binary outcomes. The mock client is
//! deterministic given (problem, strategy, trial index, seed): a pair
//! succeeds with the planted probability when the strategy's template and
//! source match the problem's planted assignment, exercising the exact
//! success semantics the scores downstream assume.

use std::collections::BTreeMap;

use anyhow::{Context, Result};

use stratex_core::corpus::{Problem, ProtocolConfig, Source, StrategyInstance, TrialRecord};
use stratex_core::prompts::{
    assemble_guidance_prompt, assemble_verification_prompt, parse_verification_response,
};
use stratex_core::rng;
use stratex_core::taxonomy::TemplateId;

use crate::http::RemoteModelClient;

/// Everything a solver call may condition on. Remote clients see only the
/// prompt; the mock uses the structured fields to stay deterministic.
pub struct SolveRequest<'a> {
    pub prompt: &'a str,
    pub problem_id: &'a str,
    pub strategy_template: &'a str,
    pub strategy_source: Source,
    pub trial_index: usize,
    pub seed: u64,
}

pub trait SolverClient {
    fn solve(&self, request: &SolveRequest) -> Result<String>;
}

/// Produces the raw verification JSON for an (answer, reference) pair.
pub trait AnswerVerifier {
    fn verify(&self, verification_prompt: &str, reference: &str, answer: &str) -> Result<String>;
}

/// Planted success rule for the mock solver: a strategy executes iff its
/// template equals the problem's planted template and its source is the
/// template's executable source.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub planted: BTreeMap<String, TemplateId>,
    pub executable_source: BTreeMap<TemplateId, Source>,
    pub hi: f64,
    pub lo: f64,
}

impl MockRule {
    /// Fully deterministic rule: matching pairs always succeed, others
    /// always fail.
    pub fn exact(
        planted: BTreeMap<String, TemplateId>,
        executable_source: BTreeMap<TemplateId, Source>,
    ) -> Self {
        MockRule {
            planted,
            executable_source,
            hi: 1.0,
            lo: 0.0,
        }
    }

    pub fn success_prob(&self, problem_id: &str, template: &str, source: Source) -> f64 {
        let matches = self.planted.get(problem_id).is_some_and(|t| t == template)
            && self.executable_source.get(template) == Some(&source);
        if matches {
            self.hi
        } else {
            self.lo
        }
    }
}

fn correct_marker(problem_id: &str) -> String {
    format!("ANSWER[{problem_id}]")
}

/// Deterministic mock solver.
pub struct MockSolver {
    pub rule: MockRule,
}

const MOCK_STREAM: u64 = 0x4d4f434b; // "MOCK"

impl SolverClient for MockSolver {
    fn solve(&self, request: &SolveRequest) -> Result<String> {
        let p = self.rule.success_prob(
            request.problem_id,
            request.strategy_template,
            request.strategy_source,
        );
        let tag = rng::hash_str(request.problem_id)
            ^ rng::hash_str(request.strategy_template).rotate_left(13)
            ^ (request.strategy_source as u64).rotate_left(29)
            ^ (request.trial_index as u64).rotate_left(43)
            ^ MOCK_STREAM;
        let mut stream = rng::substream(request.seed, tag);
        let success = rng::uniform(&mut stream, 0.0, 1.0) < p;
        Ok(if success {
            format!("Guided by the hint, the result is {}.", correct_marker(request.problem_id))
        } else {
            "The attempt did not reach a conclusive answer.".to_string()
        })
    }
}

/// Mock verifier: emits the closed-schema verdict JSON so the parsing path
/// runs end to end.
pub struct MockVerifier;

impl AnswerVerifier for MockVerifier {
    fn verify(&self, _verification_prompt: &str, reference: &str, answer: &str) -> Result<String> {
        let correct = answer.contains(reference);
        let body = serde_json::json!({
            "category": if correct { "Completely Correct" } else { "Completely Wrong" },
            "is_correct": correct,
            "score": if correct { 100 } else { 0 },
            "explanation": if correct { "final answer matches the reference" } else { "no matching final answer" },
        });
        Ok(body.to_string())
    }
}

impl SolverClient for RemoteModelClient {
    fn solve(&self, request: &SolveRequest) -> Result<String> {
        RemoteModelClient::solve(self, request.prompt)
    }
}

impl AnswerVerifier for RemoteModelClient {
    fn verify(&self, verification_prompt: &str, _reference: &str, _answer: &str) -> Result<String> {
        RemoteModelClient::verify(self, verification_prompt)
    }
}

/// Reference answer for verification: the mock uses a per-problem marker;
/// a real corpus would extract it from the reference solution.
pub fn mock_reference(problem_id: &str) -> String {
    correct_marker(problem_id)
}

/// Run `t` guided decoding trials for one (problem, strategy) pair.
///
/// Assembles the guidance prompt once, varies the trial index per call,
/// verifies every answer through the verification prompt and strict parser,
/// and records one binary outcome per trial.
pub fn run_trials(
    problem: &Problem,
    strategy: &StrategyInstance,
    client: &dyn SolverClient,
    verifier: &dyn AnswerVerifier,
    reference: &str,
    protocol: &ProtocolConfig,
    t: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let prompt = assemble_guidance_prompt(&problem.text, &[strategy.text.as_str()])
        .context("assembling guidance prompt")?;
    let mut outcomes = Vec::with_capacity(t);
    for trial_index in 0..t {
        let answer = client.solve(&SolveRequest {
            prompt: &prompt,
            problem_id: &problem.id,
            strategy_template: &strategy.template_id,
            strategy_source: strategy.source,
            trial_index,
            seed,
        })?;
        let verification_prompt = assemble_verification_prompt(&problem.text, reference, &answer)
            .context("assembling verification prompt")?;
        let raw = verifier.verify(&verification_prompt, reference, &answer)?;
        let verdict = parse_verification_response(&raw)
            .map_err(|e| anyhow::anyhow!("verification parse failure: {e}"))?;
        outcomes.push(u8::from(verdict.is_correct));
    }
    Ok(TrialRecord {
        problem_id: problem.id.clone(),
        strategy_id: strategy.id.clone(),
        model_id: protocol.model_id.clone(),
        protocol_id: protocol.id.clone(),
        outcomes,
    })
}
