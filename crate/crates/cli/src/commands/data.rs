//! Corpus-facing commands: ingest, stats, gen-synthetic.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use stratex_core::corpus::{split_corpus, Corpus, Problem, Solution, TrialRecord};
use stratex_core::corpus::usage_divergence;
use stratex_core::corpus::usage_stats;
use stratex_core::corpus::Source;
use stratex_core::synth::{generate_corpus, SynthCorpusConfig, SYNTH_PROTOCOL_ID};
use stratex_core::taxonomy::{subject_fallback, RuleTable, Taxonomy, DEFAULT_RULES, DEFAULT_TEMPLATES_JSON};

use crate::artifacts::{self, RawStrategy};
use crate::commands::{Ctx, Status};
use crate::solver::{mock_reference, run_trials, MockRule, MockSolver, MockVerifier};

fn parse_ratios(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("ratio `{p}`: {e}")))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        bail!("--ratios expects three comma-separated numbers");
    }
    Ok((parts[0], parts[1], parts[2]))
}

pub fn ingest(ctx: &Ctx, data_dir: &Path, ratios: &str, respect_splits: bool) -> Result<Status> {
    let problems_path = data_dir.join("problems.jsonl");
    let solutions_path = data_dir.join("solutions.jsonl");
    let strategies_path = data_dir.join("strategies.jsonl");
    let trials_path = data_dir.join("trials.jsonl");
    let templates_path = data_dir.join("templates.json");
    let rules_path = data_dir.join("rules.txt");
    let protocols_path = data_dir.join("protocols.jsonl");

    let problems: Vec<Problem> = artifacts::read_jsonl(&problems_path)?;
    let solutions: Vec<Solution> = if solutions_path.exists() {
        artifacts::read_jsonl(&solutions_path)?
    } else {
        Vec::new()
    };
    let raw_strategies: Vec<RawStrategy> = artifacts::read_jsonl(&strategies_path)?;
    let trials: Vec<TrialRecord> = if trials_path.exists() {
        artifacts::read_jsonl(&trials_path)?
    } else {
        Vec::new()
    };
    let protocols = if protocols_path.exists() {
        artifacts::read_jsonl(&protocols_path)?
    } else {
        Vec::new()
    };

    let taxonomy = if templates_path.exists() {
        let text = std::fs::read_to_string(&templates_path)
            .with_context(|| format!("reading {}", templates_path.display()))?;
        Taxonomy::from_json(&text).map_err(|e| anyhow!("{}: {e}", templates_path.display()))?
    } else {
        Taxonomy::from_json(DEFAULT_TEMPLATES_JSON).expect("embedded taxonomy is valid")
    };
    let rules = if rules_path.exists() {
        let text = std::fs::read_to_string(&rules_path)
            .with_context(|| format!("reading {}", rules_path.display()))?;
        RuleTable::parse(&text, &taxonomy).map_err(|e| anyhow!("{}: {e}", rules_path.display()))?
    } else {
        RuleTable::parse(DEFAULT_RULES, &taxonomy).expect("embedded rules are valid")
    };

    // Resolve missing template ids: rule match first, then the problem's
    // subject-group fallback.
    let subject_of: BTreeMap<&str, stratex_core::corpus::Subject> =
        problems.iter().map(|p| (p.id.as_str(), p.subject)).collect();
    let mut strategies = Vec::with_capacity(raw_strategies.len());
    for raw in raw_strategies {
        let template_id = match raw.template_id {
            Some(t) => t,
            None => match rules.match_text(&raw.text) {
                Some(t) => t.clone(),
                None => {
                    let subject = subject_of.get(raw.problem_id.as_str()).ok_or_else(|| {
                        anyhow!("strategy `{}` references unknown problem `{}`", raw.id, raw.problem_id)
                    })?;
                    subject_fallback(*subject)
                }
            },
        };
        strategies.push(stratex_core::corpus::StrategyInstance {
            id: raw.id,
            problem_id: raw.problem_id,
            source: raw.source,
            text: raw.text,
            template_id,
        });
    }

    let corpus = Corpus::new(problems, solutions, strategies, trials, protocols, taxonomy)
        .map_err(|e| anyhow!("corpus validation: {e}"))?;

    let corpus = if respect_splits {
        if corpus.problems().iter().any(|p| p.split.is_none()) {
            bail!("--respect-splits set but some problems carry no split label");
        }
        corpus
    } else {
        split_corpus(corpus, parse_ratios(ratios)?, ctx.seed).map_err(|e| anyhow!("{e}"))?
    };

    let mut inputs = vec![problems_path.as_path(), strategies_path.as_path()];
    for p in [&solutions_path, &trials_path, &templates_path, &rules_path, &protocols_path] {
        if p.exists() {
            inputs.push(p.as_path());
        }
    }
    let mut manifest = ctx.manifest("ingest", &inputs)?;
    manifest.record_artifact("corpus.json", artifacts::CORPUS_VERSION);

    ctx.ensure_out_dir()?;
    let out = ctx.out_path("corpus.json");
    artifacts::save_corpus(&out, &corpus, &manifest.manifest_id)?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}

#[derive(serde::Serialize)]
struct StatsFile {
    version: u32,
    manifest: String,
    human: BTreeMap<String, f64>,
    model: BTreeMap<String, f64>,
    divergence: BTreeMap<String, f64>,
}

pub fn stats(ctx: &Ctx, corpus_path: &Path) -> Result<Status> {
    let corpus = artifacts::load_corpus(corpus_path)?;
    let human = usage_stats(&corpus, Source::Human).map_err(|e| anyhow!("{e}"))?;
    let model = usage_stats(&corpus, Source::Model).map_err(|e| anyhow!("{e}"))?;
    let divergence = usage_divergence(&corpus).map_err(|e| anyhow!("{e}"))?;

    let mut manifest = ctx.manifest("stats", &[corpus_path])?;
    manifest.record_artifact("stats.json", artifacts::STATS_VERSION);
    ctx.ensure_out_dir()?;
    let out = ctx.out_path("stats.json");
    artifacts::save_json(
        &out,
        &StatsFile {
            version: artifacts::STATS_VERSION,
            manifest: manifest.manifest_id.clone(),
            human,
            model,
            divergence,
        },
    )?;
    manifest.save(&ctx.out_dir)?;
    Ok(Status::ok(&manifest, vec![out.display().to_string()]))
}

pub fn gen_synthetic(
    ctx: &Ctx,
    n_problems: usize,
    trials_per_pair: usize,
    collect_trials: bool,
) -> Result<Status> {
    let config = SynthCorpusConfig {
        n_problems,
        trials_per_pair,
        seed: ctx.seed,
        ..Default::default()
    };
    let synth = generate_corpus(&config);

    // Optionally re-collect trials through the solver harness: the mock
    // solver implements the planted rule, so the guidance and verification
    // prompt paths are exercised for every recorded outcome.
    let corpus = if collect_trials {
        let gt = &synth.ground_truth;
        let rule = MockRule {
            planted: synth
                .corpus
                .problems()
                .iter()
                .filter_map(|p| gt.planted_template(&p.id).map(|t| (p.id.clone(), t.clone())))
                .collect(),
            executable_source: synth
                .corpus
                .taxonomy()
                .templates()
                .iter()
                .filter_map(|t| gt.executable_source(&t.id).map(|s| (t.id.clone(), s)))
                .collect(),
            hi: gt.hi,
            lo: gt.lo,
        };
        let solver = MockSolver { rule };
        let protocol = synth.corpus.protocols()[0].clone();
        let mut trials = Vec::new();
        for s in synth.corpus.strategies() {
            let problem = synth.corpus.problem(&s.problem_id).expect("valid corpus");
            trials.push(run_trials(
                problem,
                s,
                &solver,
                &MockVerifier,
                &mock_reference(&problem.id),
                &protocol,
                trials_per_pair,
                ctx.seed,
            )?);
        }
        Corpus::new(
            synth.corpus.problems().to_vec(),
            synth.corpus.solutions().to_vec(),
            synth.corpus.strategies().to_vec(),
            trials,
            synth.corpus.protocols().to_vec(),
            synth.corpus.taxonomy().clone(),
        )
        .map_err(|e| anyhow!("{e}"))?
    } else {
        synth.corpus
    };

    let mut manifest = ctx.manifest("gen-synthetic", &[])?;
    ctx.ensure_out_dir()?;

    let writes: Vec<(String, u32)> = vec![
        ("problems.jsonl".into(), 0),
        ("solutions.jsonl".into(), 0),
        ("strategies.jsonl".into(), 0),
        ("trials.jsonl".into(), 0),
        ("protocols.jsonl".into(), 0),
        ("templates.json".into(), 0),
        ("rules.txt".into(), 0),
        ("problem-embeddings.jsonl".into(), 0),
        ("strategy-embeddings.jsonl".into(), 0),
        ("ground-truth.json".into(), artifacts::GROUND_TRUTH_VERSION),
    ];

    artifacts::write_jsonl(&ctx.out_path("problems.jsonl"), corpus.problems())?;
    artifacts::write_jsonl(&ctx.out_path("solutions.jsonl"), corpus.solutions())?;
    artifacts::write_jsonl(&ctx.out_path("strategies.jsonl"), corpus.strategies())?;
    artifacts::write_jsonl(&ctx.out_path("trials.jsonl"), corpus.trials())?;
    artifacts::write_jsonl(&ctx.out_path("protocols.jsonl"), corpus.protocols())?;
    std::fs::write(ctx.out_path("templates.json"), DEFAULT_TEMPLATES_JSON)?;
    std::fs::write(ctx.out_path("rules.txt"), DEFAULT_RULES)?;
    artifacts::save_embeddings(&ctx.out_path("problem-embeddings.jsonl"), &synth.problem_embeddings)?;
    artifacts::save_embeddings(
        &ctx.out_path("strategy-embeddings.jsonl"),
        &synth.strategy_embeddings,
    )?;

    let gt = &synth.ground_truth;
    let ground_truth = artifacts::GroundTruthFile {
        version: artifacts::GROUND_TRUTH_VERSION,
        manifest: manifest.manifest_id.clone(),
        hi: gt.hi,
        lo: gt.lo,
        planted: corpus
            .problems()
            .iter()
            .filter_map(|p| gt.planted_template(&p.id).map(|t| (p.id.clone(), t.clone())))
            .collect(),
        executable_source: corpus
            .taxonomy()
            .templates()
            .iter()
            .filter_map(|t| gt.executable_source(&t.id).map(|s| (t.id.clone(), s)))
            .collect(),
    };
    artifacts::save_json(&ctx.out_path("ground-truth.json"), &ground_truth)?;

    let mut outputs = Vec::new();
    for (name, version) in writes {
        if version > 0 {
            manifest.record_artifact(&name, version);
        }
        outputs.push(ctx.out_path(&name).display().to_string());
    }
    manifest.save(&ctx.out_dir)?;
    let _ = SYNTH_PROTOCOL_ID;
    Ok(Status::ok(&manifest, outputs))
}
