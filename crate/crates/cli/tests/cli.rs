//! End-to-end CLI tests: the full artifact chain over a small synthetic
//! corpus, determinism of generation and evaluation, and the documented
//! error paths.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn stratex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stratex"))
}

fn run_ok(args: &[&str]) -> Value {
    let output = stratex().args(args).output().expect("spawning stratex");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        output.status.success(),
        "command {:?} failed\nstdout: {stdout}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    let line = stdout.lines().last().expect("status line");
    let status: Value = serde_json::from_str(line).expect("status is JSON");
    assert_eq!(status["status"], "ok", "{status}");
    status
}

fn run_err(args: &[&str]) -> String {
    let output = stratex().args(args).output().expect("spawning stratex");
    assert!(
        !output.status.success(),
        "command {:?} unexpectedly succeeded",
        args
    );
    let stdout = String::from_utf8_lossy(&output.stdout).to_string();
    if let Some(line) = stdout.lines().last() {
        if let Ok(status) = serde_json::from_str::<Value>(line) {
            assert_eq!(status["status"], "error");
            return status["message"].as_str().unwrap_or_default().to_string();
        }
    }
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("test.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

struct Chain {
    data: PathBuf,
    out: PathBuf,
    config: PathBuf,
}

/// Generate a small corpus and run the chain through calibrate.
fn build_chain(root: &Path, seed: &str) -> Chain {
    let data = root.join("data");
    let out = root.join("out");
    let config = write_config(root, "epochs=5\n");
    let d = data.to_str().unwrap().to_string();
    let o = out.to_str().unwrap().to_string();
    let c = config.to_str().unwrap().to_string();

    run_ok(&[
        "gen-synthetic",
        "--seed",
        seed,
        "--out-dir",
        &d,
        "--n-problems",
        "30",
    ]);
    run_ok(&[
        "ingest",
        "--data-dir",
        &d,
        "--respect-splits",
        "--out-dir",
        &o,
    ]);
    let corpus = out.join("corpus.json");
    let pe = data.join("problem-embeddings.jsonl");
    let se = data.join("strategy-embeddings.jsonl");
    run_ok(&[
        "build-graph",
        "--corpus",
        corpus.to_str().unwrap(),
        "--problem-embeddings",
        pe.to_str().unwrap(),
        "--strategy-embeddings",
        se.to_str().unwrap(),
        "--out-dir",
        &o,
    ]);
    run_ok(&[
        "label",
        "--corpus",
        corpus.to_str().unwrap(),
        "--graph",
        out.join("graph.json").to_str().unwrap(),
        "--out-dir",
        &o,
    ]);
    run_ok(&[
        "train-encoder",
        "--graph",
        out.join("graph.json").to_str().unwrap(),
        "--scores",
        out.join("scores.jsonl").to_str().unwrap(),
        "--problem-embeddings",
        pe.to_str().unwrap(),
        "--strategy-embeddings",
        se.to_str().unwrap(),
        "--config",
        &c,
        "--seed",
        seed,
        "--out-dir",
        &o,
    ]);
    let shared = [
        "--corpus".to_string(),
        corpus.display().to_string(),
        "--graph".to_string(),
        out.join("graph.json").display().to_string(),
        "--scores".to_string(),
        out.join("scores.jsonl").display().to_string(),
        "--node-embeddings".to_string(),
        out.join("node-embeddings.json").display().to_string(),
        "--problem-embeddings".to_string(),
        pe.display().to_string(),
        "--strategy-embeddings".to_string(),
        se.display().to_string(),
    ];
    let shared_refs: Vec<&str> = shared.iter().map(String::as_str).collect();
    let mut fit_args = vec!["fit-predictor"];
    fit_args.extend(&shared_refs);
    fit_args.extend(["--out-dir", &o]);
    run_ok(&fit_args);
    let predictor_path = out.join("predictor.json").display().to_string();
    let mut cal_args = vec!["calibrate"];
    cal_args.extend(&shared_refs);
    cal_args.extend(["--predictor", &predictor_path, "--out-dir", &o]);
    run_ok(&cal_args);
    Chain { data, out, config }
}

#[test]
fn full_artifact_chain_and_retrieval() {
    let root = tempfile::tempdir().unwrap();
    let chain = build_chain(root.path(), "7");
    let out = &chain.out;
    let o = out.to_str().unwrap();

    for artifact in [
        "corpus.json",
        "graph.json",
        "scores.jsonl",
        "encoder.json",
        "losses.json",
        "node-embeddings.json",
        "predictor.json",
    ] {
        assert!(out.join(artifact).exists(), "{artifact} missing");
    }

    // Every artifact references the manifest that created it.
    for artifact in ["corpus.json", "graph.json", "encoder.json", "predictor.json"] {
        let value: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(artifact)).unwrap()).unwrap();
        assert!(value["version"].is_u64(), "{artifact} has no version");
        assert!(
            value["manifest"].as_str().is_some_and(|m| !m.is_empty()),
            "{artifact} has no manifest reference"
        );
    }

    // Pick a test-split problem for retrieval.
    let corpus: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("corpus.json")).unwrap()).unwrap();
    let test_problem = corpus["problems"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["split"] == "test")
        .expect("a test problem")["id"]
        .as_str()
        .unwrap()
        .to_string();

    let shared_owned = [
        ("--corpus", out.join("corpus.json")),
        ("--graph", out.join("graph.json")),
        ("--scores", out.join("scores.jsonl")),
        ("--node-embeddings", out.join("node-embeddings.json")),
        ("--predictor", out.join("predictor.json")),
        ("--problem-embeddings", chain.data.join("problem-embeddings.jsonl")),
        ("--strategy-embeddings", chain.data.join("strategy-embeddings.jsonl")),
    ];
    let shared_strings: Vec<String> = shared_owned
        .iter()
        .flat_map(|(flag, path)| [flag.to_string(), path.display().to_string()])
        .collect();
    let shared: Vec<&str> = shared_strings.iter().map(String::as_str).collect();
    let mut retrieve_args = vec!["retrieve", "--problem-id", &test_problem];
    retrieve_args.extend(&shared);
    retrieve_args.extend(["--out-dir", o]);
    run_ok(&retrieve_args);

    let retrieval: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("retrieval.json")).unwrap())
            .unwrap();
    let candidates = retrieval["candidates"].as_array().unwrap();
    assert!(!candidates.is_empty() && candidates.len() <= 5);
    for c in candidates {
        assert!(!c["routes"].as_array().unwrap().is_empty(), "empty provenance");
        assert!(c["score"].as_f64().unwrap() > 0.0);
        assert!(!c["text"].as_str().unwrap().is_empty());
    }

    // Guide renders the prompt for the same query.
    let mut guide_args = vec!["guide", "--problem-id", &test_problem];
    guide_args.extend(&shared);
    guide_args.extend(["--out-dir", o]);
    run_ok(&guide_args);
    let prompt = std::fs::read_to_string(out.join("guidance-prompt.txt")).unwrap();
    assert!(prompt.contains("Strategy guidance (from similar solved problems):"));
    assert!(prompt.contains("- Conclude with the final answer."));

    // Ablation switch: disabling all but C still succeeds and marks routes C.
    let mut ablate_args = vec!["retrieve", "--problem-id", &test_problem, "--routes", "C"];
    ablate_args.extend(&shared);
    ablate_args.extend(["--out-dir", o]);
    run_ok(&ablate_args);
    let retrieval: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("retrieval.json")).unwrap())
            .unwrap();
    for c in retrieval["candidates"].as_array().unwrap() {
        assert_eq!(c["routes"], serde_json::json!(["C"]));
    }

    let _ = chain.config;
}

#[test]
fn gen_synthetic_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for dir in [&a, &b] {
        run_ok(&[
            "gen-synthetic",
            "--seed",
            "7",
            "--n-problems",
            "12",
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
    }
    for file in ["problems.jsonl", "strategies.jsonl", "trials.jsonl", "ground-truth.json"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn collected_trials_come_from_the_harness() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("d");
    run_ok(&[
        "gen-synthetic",
        "--seed",
        "3",
        "--n-problems",
        "8",
        "--trials-per-pair",
        "4",
        "--collect-trials",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    let trials = std::fs::read_to_string(dir.join("trials.jsonl")).unwrap();
    let first: Value = serde_json::from_str(trials.lines().next().unwrap()).unwrap();
    assert_eq!(first["outcomes"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_graph_artifact_names_the_file() {
    let root = tempfile::tempdir().unwrap();
    let o = root.path().join("out");
    let msg = run_err(&[
        "train-encoder",
        "--graph",
        root.path().join("graph.json").to_str().unwrap(),
        "--scores",
        root.path().join("scores.jsonl").to_str().unwrap(),
        "--problem-embeddings",
        root.path().join("pe.jsonl").to_str().unwrap(),
        "--strategy-embeddings",
        root.path().join("se.jsonl").to_str().unwrap(),
        "--out-dir",
        o.to_str().unwrap(),
    ]);
    assert!(msg.contains("graph.json") || msg.contains("pe.jsonl"), "{msg}");
}

#[test]
fn unknown_subcommand_is_rejected() {
    let output = stratex().arg("frobnicate").output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn eval_is_reproducible_bit_for_bit() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    run_ok(&[
        "gen-synthetic",
        "--seed",
        "5",
        "--n-problems",
        "25",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    let config = write_config(root.path(), "epochs=3\n");
    let mut digests = Vec::new();
    for run in ["r1", "r2"] {
        let out = root.path().join(run);
        run_ok(&[
            "eval",
            "--data-dir",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "5",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        digests.push(std::fs::read(out.join("eval.json")).unwrap());
    }
    assert_eq!(digests[0], digests[1], "eval.json differs across identical runs");
}
