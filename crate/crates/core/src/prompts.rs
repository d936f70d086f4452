//! Prompt templates and strict response parsers.
//!
//! Five fixed templates drive every model interaction: strategy extraction,
//! direct solving, strategy-guided solving, answer verification, and
//! strategy-adherence judging. Rendering is byte-exact (golden-file tested)
//! and parsing is strict: closed enums, required fields, range checks, the
//! 3–5 strategy count limit, and rejection of code-fenced responses.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Template identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Extraction,
    Direct,
    Guidance,
    Verification,
    Adherence,
}

/// A template body with named `{placeholder}` markers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptTemplate {
    pub id: PromptKind,
    pub body: &'static str,
}

pub const EXTRACTION_TEMPLATE: PromptTemplate = PromptTemplate {
    id: PromptKind::Extraction,
    body: "You are a mathematics expert analyzing problem-solving strategies.\n\nOutput ONLY valid JSON. Do NOT use markdown or code fences.\n\nTask: extract_solution_strategies\n\nInstructions:\n1. From the given solution, extract the KEY STRATEGIES that would help solve\n   SIMILAR problems.\n2. Write each strategy as a concrete, actionable approach, e.g.:\n   - \"Express each variable as $p^alpha$ and compare exponents\"\n   - \"Apply inclusion-exclusion to count overlapping cases\"\n\nReturn the result in the following JSON format:\n{\n  \"strategies\": [\"strategy1\", \"strategy2\", \"...\"],\n}\n\nGuidelines:\n- Limit to 3-5 most critical strategies.\n- Focus on reusable reasoning techniques, not problem-specific calculations.\n- Be precise, concise, and actionable.\n\nProblem:\n{problem_text}\n\nSolution:\n{solution_text}\n",
};

pub const DIRECT_TEMPLATE: PromptTemplate = PromptTemplate {
    id: PromptKind::Direct,
    body: "Solve the following mathematical problem step by step.\n\nProblem:\n{problem_text}\n\nInstructions:\n- Provide a detailed solution with clear reasoning.\n- Conclude with the final answer.\n",
};

pub const GUIDANCE_TEMPLATE: PromptTemplate = PromptTemplate {
    id: PromptKind::Guidance,
    body: "System: You are an expert mathematician solving competition problems.\n\nUser: Solve the following problem using the provided strategy guidance.\n\nProblem:\n{problem_text}\n\nStrategy guidance (from similar solved problems):\n- {strategy_1}\n- {strategy_2}\n- ...\n\nInstructions:\n- Use the strategies above as hints for your solution approach.\n- Solve the problem step by step with clear reasoning.\n- Conclude with the final answer.\n",
};

pub const VERIFICATION_TEMPLATE: PromptTemplate = PromptTemplate {
    id: PromptKind::Verification,
    body: "System: You are a rigorous mathematics expert who evaluates student solutions with strict standards.\n\nUser: You are a rigorous mathematics expert evaluating student answers.\n\nProblem:\n{problem_text}\n\nGround Truth Answer (extracted from reference solution):\n{reference_solution}\n\nStudent's Final Answer (reasoning process has been separated):\n{student_final_answer}\n\nEvaluation task:\nCompare the student's final answer with the ground truth answer and determine\nwhether they are mathematically equivalent.\n\nMathematical equivalence rules:\n- Account for different valid representations:\n  * Fractions vs decimals (e.g., 1/2 = 0.5)\n  * Mixed numbers vs improper fractions (e.g., 10 2/3 = 32/3)\n  * Simplified vs unsimplified forms (e.g., 2/4 = 1/2)\n  * Different algebraic forms (e.g., x^2 - 1 = (x-1)(x+1))\n  * Equivalent expressions (e.g., 2x + 2 = 2(x+1))\n- For proofs: check whether the conclusion is logically equivalent.\n- Be STRICT about numerical values (mismatch => wrong).\n- Be STRICT about signs (negative vs positive matters).\n\nClassification:\n- \"Completely Correct\": final answer is mathematically equivalent to ground truth\n- \"Completely Wrong\": not equivalent, or missing, or nonsensical\n\nOutput ONLY valid JSON (no markdown, no code fences) in this format:\n{\n  \"category\": \"Completely Correct\" | \"Completely Wrong\",\n  \"is_correct\": true | false,\n  \"score\": 0-100,\n  \"explanation\": \"brief explanation\"\n}\n",
};

pub const ADHERENCE_TEMPLATE: PromptTemplate = PromptTemplate {
    id: PromptKind::Adherence,
    body: "You are an expert evaluator of mathematical reasoning strategies.\n\nTask: Determine whether a specific strategy was correctly executed in a student's solution.\n\nProblem: {problem_text}\n\nTarget Strategy:\nStrategy Description: {strategy_text}\n\nStudent's Reasoning: {reasoning_excerpt}\n\nEvaluation Instructions:\nAssess whether the target strategy was actually used in the student's reasoning,\nand if so, whether it was applied correctly.\n\nYou must classify the strategy usage into exactly one of the following categories:\n\n1. correctly_executed\n   - The strategy was genuinely applied\n   - The logical steps follow the methodology of the strategy\n   - The execution is correct and contributes to the solution\n\n2. attempted_but_incorrect\n   - The student attempted to apply the strategy\n   - However, the execution contains logical errors, misapplication, or flawed reasoning\n\n3. mentioned_only\n   - The strategy is referenced or hinted at via keywords or superficial mentions\n   - No substantive application or execution is present\n\n4. not_used\n   - There is no evidence that this strategy was used at all\n\nCritical Evaluation Criteria:\n- Do NOT rely on keyword matching alone\n- Verify that the reasoning steps structurally align with the strategy\n- \"Correctly executed\" requires both correct methodology and correct execution\n- Be strict: partial or vague usage should NOT be marked as correctly executed\n\nOutput Format:\nReturn ONLY valid JSON (no markdown, no code fences) in the following format:\n\n{\n  \"execution_status\": \"correctly_executed | attempted_but_incorrect | mentioned_only | not_used\",\n  \"confidence\": 0-100,\n  \"evidence\": \"Direct quote from the student's reasoning, or null if not used\",\n  \"explanation\": \"2-3 sentences explaining the judgment\",\n  \"critical_to_solution\": true | false,\n  \"execution_quality_score\": 0-10\n}\n\nImportant:\nOnly mark a strategy as \"correctly_executed\" if there is clear, concrete evidence\nthat the student followed the intended strategy and applied it correctly.\n",
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("guidance requires between 1 and 5 strategies, got {0}")]
    StrategyBudget(usize),
    #[error("template is missing placeholder `{0}`")]
    MissingPlaceholder(&'static str),
    #[error("response is wrapped in code fences")]
    FencedResponse,
    #[error("malformed JSON response: {0}")]
    MalformedJson(String),
    #[error("response is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    WrongType(&'static str),
    #[error("strategy count {0} outside the 3-5 limit")]
    CountOutOfRange(usize),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown execution status `{0}`")]
    UnknownStatus(String),
    #[error("field `{field}` value {value} outside {lo}..={hi}")]
    ValueOutOfRange {
        field: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },
}

fn substitute(body: &str, replacements: &[(&'static str, &str)]) -> Result<String, PromptError> {
    let mut out = String::from(body);
    for (name, value) in replacements {
        let marker = alloc::format!("{{{name}}}");
        if !out.contains(marker.as_str()) {
            return Err(PromptError::MissingPlaceholder(name));
        }
        out = out.replacen(marker.as_str(), value, 1);
    }
    Ok(out)
}

/// Render the guidance prompt: problem text, one `- {strategy}` bullet per
/// strategy in rank order, then the fixed instruction block. Accepts 1–5
/// strategies (the guidance budget).
pub fn assemble_guidance_prompt(
    problem_text: &str,
    strategies: &[&str],
) -> Result<String, PromptError> {
    if strategies.is_empty() || strategies.len() > 5 {
        return Err(PromptError::StrategyBudget(strategies.len()));
    }
    let bullets: Vec<String> = strategies.iter().map(|s| alloc::format!("- {s}")).collect();
    let block = bullets.join("\n");
    let body = GUIDANCE_TEMPLATE
        .body
        .replacen("- {strategy_1}\n- {strategy_2}\n- ...", &block, 1);
    substitute(&body, &[("problem_text", problem_text)])
}

pub fn assemble_extraction_prompt(
    problem_text: &str,
    solution_text: &str,
) -> Result<String, PromptError> {
    substitute(
        EXTRACTION_TEMPLATE.body,
        &[("problem_text", problem_text), ("solution_text", solution_text)],
    )
}

pub fn assemble_direct_prompt(problem_text: &str) -> Result<String, PromptError> {
    substitute(DIRECT_TEMPLATE.body, &[("problem_text", problem_text)])
}

pub fn assemble_verification_prompt(
    problem_text: &str,
    reference_solution: &str,
    student_final_answer: &str,
) -> Result<String, PromptError> {
    substitute(
        VERIFICATION_TEMPLATE.body,
        &[
            ("problem_text", problem_text),
            ("reference_solution", reference_solution),
            ("student_final_answer", student_final_answer),
        ],
    )
}

pub fn assemble_adherence_prompt(
    problem_text: &str,
    strategy_text: &str,
    reasoning_excerpt: &str,
) -> Result<String, PromptError> {
    substitute(
        ADHERENCE_TEMPLATE.body,
        &[
            ("problem_text", problem_text),
            ("strategy_text", strategy_text),
            ("reasoning_excerpt", reasoning_excerpt),
        ],
    )
}

fn parse_object(text: &str) -> Result<Value, PromptError> {
    if text.trim_start().starts_with("```") {
        return Err(PromptError::FencedResponse);
    }
    serde_json::from_str(text).map_err(|e| PromptError::MalformedJson(alloc::format!("{e}")))
}

fn require<'v>(value: &'v Value, field: &'static str) -> Result<&'v Value, PromptError> {
    value.get(field).ok_or(PromptError::MissingField(field))
}

fn require_int_in(
    value: &Value,
    field: &'static str,
    lo: i64,
    hi: i64,
) -> Result<i64, PromptError> {
    let v = require(value, field)?
        .as_i64()
        .ok_or(PromptError::WrongType(field))?;
    if !(lo..=hi).contains(&v) {
        return Err(PromptError::ValueOutOfRange { field, value: v, lo, hi });
    }
    Ok(v)
}

/// Parse a strategy-extraction response: a JSON object whose `strategies`
/// array holds 3–5 strings. Surrounding whitespace is stripped from each
/// strategy; fenced responses are rejected outright.
pub fn parse_extraction_response(text: &str) -> Result<Vec<String>, PromptError> {
    let value = parse_object(text)?;
    let items = require(&value, "strategies")?
        .as_array()
        .ok_or(PromptError::WrongType("strategies"))?;
    if !(3..=5).contains(&items.len()) {
        return Err(PromptError::CountOutOfRange(items.len()));
    }
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(|s| String::from(s.trim()))
                .ok_or(PromptError::WrongType("strategies"))
        })
        .collect()
}

/// Verification verdict categories (closed set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationCategory {
    #[serde(rename = "Completely Correct")]
    CompletelyCorrect,
    #[serde(rename = "Completely Wrong")]
    CompletelyWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub is_correct: bool,
    pub category: VerificationCategory,
    pub score: u8,
    pub explanation: String,
}

/// Parse an answer-verification response.
pub fn parse_verification_response(text: &str) -> Result<VerificationOutcome, PromptError> {
    let value = parse_object(text)?;
    let category = match require(&value, "category")?
        .as_str()
        .ok_or(PromptError::WrongType("category"))?
    {
        "Completely Correct" => VerificationCategory::CompletelyCorrect,
        "Completely Wrong" => VerificationCategory::CompletelyWrong,
        other => return Err(PromptError::UnknownCategory(String::from(other))),
    };
    let is_correct = require(&value, "is_correct")?
        .as_bool()
        .ok_or(PromptError::WrongType("is_correct"))?;
    let score = require_int_in(&value, "score", 0, 100)? as u8;
    let explanation = String::from(
        require(&value, "explanation")?
            .as_str()
            .ok_or(PromptError::WrongType("explanation"))?,
    );
    Ok(VerificationOutcome {
        is_correct,
        category,
        score,
        explanation,
    })
}

/// Strategy execution verdicts (closed set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    CorrectlyExecuted,
    AttemptedButIncorrect,
    MentionedOnly,
    NotUsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceOutcome {
    pub execution_status: ExecutionStatus,
    pub confidence: u8,
    pub critical_to_solution: bool,
    pub quality: u8,
}

/// Parse a strategy-adherence response.
pub fn parse_adherence_response(text: &str) -> Result<AdherenceOutcome, PromptError> {
    let value = parse_object(text)?;
    let execution_status = match require(&value, "execution_status")?
        .as_str()
        .ok_or(PromptError::WrongType("execution_status"))?
    {
        "correctly_executed" => ExecutionStatus::CorrectlyExecuted,
        "attempted_but_incorrect" => ExecutionStatus::AttemptedButIncorrect,
        "mentioned_only" => ExecutionStatus::MentionedOnly,
        "not_used" => ExecutionStatus::NotUsed,
        other => return Err(PromptError::UnknownStatus(String::from(other))),
    };
    let confidence = require_int_in(&value, "confidence", 0, 100)? as u8;
    let critical_to_solution = require(&value, "critical_to_solution")?
        .as_bool()
        .ok_or(PromptError::WrongType("critical_to_solution"))?;
    let quality = require_int_in(&value, "execution_quality_score", 0, 10)? as u8;
    Ok(AdherenceOutcome {
        execution_status,
        confidence,
        critical_to_solution,
        quality,
    })
}
