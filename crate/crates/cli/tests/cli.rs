use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn medforum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medforum"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.push("--json");
    let out = medforum(&all);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_summarizes_the_bundled_corpus() {
    let v = json(&["ingest"]);
    assert_eq!(v["posts"], 60);
    assert_eq!(v["labeled"], 60);
    assert_eq!(v["class_histogram"], serde_json::json!([20, 20, 20]));
}

#[test]
fn ingest_writes_a_store_that_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("corpus.bin");
    assert!(medforum(&["ingest", "--store", path(&store)]).status.success());
    let a = json(&["extract-concepts", "--corpus", path(&store)]);
    let b = json(&["extract-concepts"]);
    assert_eq!(a, b);
}

#[test]
fn retrieve_prints_ranked_rows_with_breakdown() {
    let out = medforum(&["retrieve", "--query-id", "post001", "--top", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    for h in ["rank", "post", "ds", "ss", "ts", "misim", "sim"] {
        assert!(lines[0].split_whitespace().any(|c| c == h), "missing column {h}");
    }

    let v = json(&["retrieve", "--query-id", "post001", "--top", "5"]);
    let ranked = v["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 5);
    let sims: Vec<f64> = ranked.iter().map(|r| r["breakdown"]["sim"].as_f64().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    assert!(ranked.iter().all(|r| r["post_id"] != "post001"));
}

#[test]
fn json_output_is_byte_identical_across_runs() {
    for args in [
        &["retrieve", "--query-id", "post007", "--json"][..],
        &["suggest", "--query-id", "post007", "--tau", "0.1", "--json"][..],
        &["evaluate", "--json"][..],
        &["gradcheck", "--json", "--seed", "3"][..],
    ] {
        let a = medforum(args);
        let b = medforum(args);
        assert!(a.status.success(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn suggest_with_unreachable_tau_prints_an_empty_table() {
    let out = medforum(&["suggest", "--query-id", "post001", "--tau", "1.5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("disease"));
    assert!(text.contains("no treatment clears tau"));
    let v = json(&["suggest", "--query-id", "post001", "--tau", "1.5"]);
    assert_eq!(v["suggestions"], serde_json::json!([]));
}

#[test]
fn suggestions_respect_tau_and_carry_evidence() {
    let v = json(&["suggest", "--query-id", "post001", "--tau", "0.2"]);
    let list = v["suggestions"].as_array().unwrap();
    assert!(!list.is_empty());
    for s in list {
        let g = s["g"].as_f64().unwrap();
        assert!(g >= 0.2);
        assert!((g - s["sim"].as_f64().unwrap() * s["pr"].as_f64().unwrap()).abs() < 1e-12);
        assert_ne!(s["evidence_post_id"], "post001");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = medforum(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());

    assert_eq!(medforum(&["retrieve"]).status.code(), Some(1));
    assert_eq!(medforum(&["ingest", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        medforum(&["retrieve", "--query-id", "post001", "--top", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        medforum(&["suggest", "--query-id", "post001", "--tau", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(medforum(&["classify", "--text", "hello"]).status.code(), Some(1));
    let missing = medforum(&["ingest", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));
}

#[test]
fn help_exits_zero() {
    let out = medforum(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for cmd in [
        "ingest",
        "extract-concepts",
        "train",
        "classify",
        "retrieve",
        "suggest",
        "evaluate",
        "gradcheck",
    ] {
        assert!(stdout(&out).contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
    let out = medforum(&["ingest", "--corpus", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    let judgments = dir.path().join("j.tsv");
    fs::write(&judgments, "post001\tpost002\t4\ta1\npost001\tpost003\t9\ta1\n").unwrap();
    let out = medforum(&["evaluate", "--judgments", path(&judgments)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    assert_eq!(
        medforum(&["retrieve", "--query-id", "no-such-post"]).status.code(),
        Some(2)
    );
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"top_n": 3, "mode": "text_only", "suggestion": {"tau": 0.9}}"#).unwrap();
    let v = json(&["retrieve", "--query-id", "post001", "--config", path(&cfg)]);
    assert_eq!(v["n"], 3);
    assert_eq!(v["mode"], "text_only");
    let v = json(&[
        "retrieve",
        "--query-id",
        "post001",
        "--config",
        path(&cfg),
        "--top",
        "2",
        "--mode",
        "full",
    ]);
    assert_eq!(v["n"], 2);
    assert_eq!(v["mode"], "full");
    let v = json(&["suggest", "--query-id", "post001", "--config", path(&cfg)]);
    assert_eq!(v["tau"], 0.9);

    fs::write(&cfg, r#"{"top": 3}"#).unwrap();
    assert_eq!(medforum(&["ingest", "--config", path(&cfg)]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_on_every_architecture() {
    let v = json(&["gradcheck"]);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r["passed"], true, "{r}");
        assert!(r["max_relative_error"].as_f64().unwrap() < 1e-4);
    }
    let one = json(&["gradcheck", "--architecture", "lstm"]);
    assert_eq!(one.as_array().unwrap().len(), 1);
}

#[test]
fn gradcheck_fails_with_a_useless_epsilon() {
    let out = medforum(&["gradcheck", "--architecture", "cnn-lstm-cnn", "--epsilon", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn train_then_classify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let train = |m: &Path| {
        medforum(&[
            "train",
            "--architecture",
            "cnn",
            "--epochs",
            "3",
            "--seed",
            "5",
            "--model",
            path(m),
            "--json",
        ])
    };
    let (ra, rb) = (train(&a), train(&b));
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let va: Value = serde_json::from_slice(&ra.stdout).unwrap();
    let vb: Value = serde_json::from_slice(&rb.stdout).unwrap();
    assert_eq!(va["training"], vb["training"]);
    assert_eq!(va["training"]["trace"].as_array().unwrap().len(), 3);

    let v = json(&[
        "classify",
        "--model",
        path(&a),
        "--text",
        "my asthma is much better since the inhaler",
    ]);
    let row = &v[0];
    let p: Vec<f64> = row["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(p.len(), 3);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(["Positive", "Neutral", "Negative"].contains(&row["sentiment"].as_str().unwrap()));

    let all = json(&["classify", "--model", path(&a)]);
    assert_eq!(all.as_array().unwrap().len(), 60);

    let v = json(&[
        "suggest",
        "--query-id",
        "post003",
        "--labels",
        "predicted",
        "--model",
        path(&a),
        "--tau",
        "0",
    ]);
    assert!(v["suggestions"].is_array());
}

#[test]
fn classify_rejects_mismatched_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let out = medforum(&[
        "train",
        "--architecture",
        "cnn",
        "--epochs",
        "1",
        "--model",
        path(&model),
    ]);
    assert!(out.status.success());
    let emb = dir.path().join("vectors.txt");
    fs::write(&emb, "2 3\nasthma 1 0 0\ninhaler 0 1 0\n").unwrap();
    let out = medforum(&[
        "classify",
        "--model",
        path(&model),
        "--embeddings",
        path(&emb),
        "--text",
        "asthma",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn cross_validation_reports_every_fold() {
    let v = json(&[
        "train",
        "--cv",
        "3",
        "--architecture",
        "cnn",
        "--epochs",
        "2",
        "--threads",
        "3",
    ]);
    assert_eq!(v["k"], 3);
    let folds = v["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    let tested: usize = folds.iter().map(|f| f["test_size"].as_u64().unwrap() as usize).sum();
    assert_eq!(tested, 60);
}

#[test]
fn evaluate_reports_ranking_and_agreement_metrics() {
    let full = json(&["evaluate"]);
    let knn = json(&["evaluate", "--mode", "text_only"]);
    for v in [&full, &knn] {
        assert_eq!(v["k"], 5);
        assert_eq!(v["queries"].as_array().unwrap().len(), 10);
        let p = v["mean_precision"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(v["correlation"]["r"].as_f64().unwrap().abs() <= 1.0);
        assert!(v["alpha_interval"].as_f64().unwrap() <= 1.0);
    }
    assert_eq!(full["alpha_interval"], knn["alpha_interval"]);
}
