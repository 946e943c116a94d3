use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anchor_rank::anchor::AnchorConfig;
use anchor_rank::models::{CamlConfig, ModelKind};
use anchor_rank::train::{EncoderSpec, TrainConfig};
use anchor_rank_cli::{parse_records, PredictionRecord};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn bin(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_anchor-rank")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name).display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn tiny(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 2,
        seed: 3,
        anchor: AnchorConfig { window: 4, max_len: 64, doc_max_len: 256 },
        encoder: EncoderSpec { width: 8, depth: 1, heads: 2, ffn_width: 12 },
        local_radius: 4,
        caml: CamlConfig { embed_dim: 6, kernel: 3, filters: 5 },
        ..TrainConfig::reference_default(kind, true)
    }
}

/// Trains on the fixture corpus and returns the run directory.
fn train_fixture(dir: &Path, kind: ModelKind) -> PathBuf {
    let out = dir.join(kind.as_str());
    let config = dir.join(format!("{}.json", kind.as_str()));
    fs::write(&config, serde_json::to_string(&tiny(kind)).unwrap()).unwrap();
    let r = bin(&[
        "train", "--corpus", &fixture("worked_example.jsonl"), "--table", &fixture("codes.tsv"),
        "--out", &s(&out), "--config", &s(&config),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out
}

fn predict(run: &Path, split: &str) -> Run {
    bin(&[
        "predict", "--model", &s(&run.join("model.json")), "--corpus", &fixture("worked_example.jsonl"),
        "--table", &fixture("codes.tsv"), "--split", split,
    ])
}

#[test]
fn ingest_accepts_fixture_and_names_the_bad_line() {
    let r = bin(&["--json", "ingest", &fixture("worked_example.jsonl"), "--table", &fixture("codes.tsv")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["documents"], 6);

    let dir = tempfile::tempdir().unwrap();
    let mut lines: Vec<String> = fs::read_to_string(fixture("worked_example.jsonl")).unwrap().lines().map(String::from).collect();
    lines[2] = lines[2].replacen("\"start\":", "\"start\":\"x\",\"oops\":", 1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let r = bin(&["ingest", &s(&bad)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);
}

#[test]
fn stats_reports_every_split() {
    let r = bin(&["--json", "stats", &fixture("worked_example.jsonl")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert!(v["splits"].is_object() && v["mismatch"].is_object());
    let text = bin(&["stats", &fixture("worked_example.jsonl")]);
    assert!(text.stdout.contains("train") && text.stdout.contains("test"));
}

#[test]
fn missing_inputs_exit_with_usage_code() {
    let r = bin(&["train", "--corpus", "/nonexistent/corpus.jsonl", "--table", &fixture("codes.tsv"), "--out", "/tmp/never"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/nonexistent/corpus.jsonl"), "{}", r.stderr);
    assert_eq!(bin(&["no-such-command"]).code, 2);
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_fixture(dir.path(), ModelKind::Aggregation);
    for f in ["model.json", "vocab.tsv", "history.jsonl", "threshold.json", "config.json", "train_codes.tsv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("history.jsonl")).unwrap().lines().count(), 2);

    let r = predict(&run, "test");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let records = parse_records(&r.stdout).unwrap();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|p| p.doc_id == "mimic-example"));
    assert_eq!(records.iter().map(|p| p.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert!(records.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(predict(&run, "test").stdout, r.stdout);

    let preds = dir.path().join("p.jsonl");
    fs::write(&preds, &r.stdout).unwrap();
    let e = bin(&[
        "--json", "evaluate", "--predictions", &s(&preds), "--corpus", &fixture("worked_example.jsonl"),
        "--threshold-file", &s(&run.join("threshold.json")), "--split", "test",
    ]);
    assert_eq!(e.code, 0, "{}", e.stderr);
    let v: serde_json::Value = serde_json::from_str(&e.stdout).unwrap();
    assert!(v["ndcg_at_12"].as_f64().is_some());
}

#[test]
fn predicting_an_empty_split_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_fixture(dir.path(), ModelKind::Base);
    let only_train = dir.path().join("train_only.jsonl");
    let text: String = fs::read_to_string(fixture("worked_example.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"split\":\"train\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&only_train, text).unwrap();
    let r = bin(&[
        "predict", "--model", &s(&run.join("model.json")), "--corpus", &s(&only_train),
        "--table", &fixture("codes.tsv"), "--split", "test",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.is_empty());
}

#[test]
fn predict_rejects_a_different_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_fixture(dir.path(), ModelKind::Base);
    let vocab = fs::read_to_string(run.join("vocab.tsv")).unwrap();
    let other = dir.path().join("other_vocab.tsv");
    fs::write(&other, format!("{vocab}zzzextra\t1\n")).unwrap();
    let r = bin(&[
        "predict", "--model", &s(&run.join("model.json")), "--corpus", &fixture("worked_example.jsonl"),
        "--table", &fixture("codes.tsv"), "--vocab", &s(&other),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.to_lowercase().contains("vocab"), "{}", r.stderr);
}

fn oracle_records(invert: bool) -> Vec<PredictionRecord> {
    let corpus = anchor_rank::corpus::Corpus::from_jsonl(&fs::read_to_string(fixture("worked_example.jsonl")).unwrap(), "f").unwrap();
    let mut out = Vec::new();
    for doc in corpus.split(anchor_rank::corpus::Split::Test) {
        let mut scored: Vec<(f64, String)> = doc
            .code_relevance()
            .into_iter()
            .map(|(code, rel)| {
                let gain = match rel {
                    anchor_rank::corpus::Relevance::Primary => 0.9,
                    anchor_rank::corpus::Relevance::Secondary => 0.7,
                    anchor_rank::corpus::Relevance::Irrelevant => 0.1,
                };
                (if invert { 1.0 - gain } else { gain }, code.to_string())
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (i, (score, code)) in scored.into_iter().enumerate() {
            out.push(PredictionRecord {
                doc_id: doc.id.clone(),
                code: code.parse().unwrap(),
                score: Some(score),
                rank: i + 1,
                above_threshold: score >= 0.5,
            });
        }
    }
    out
}

fn evaluate(dir: &Path, records: &[PredictionRecord], extra: &[&str]) -> Run {
    let preds = dir.join("oracle.jsonl");
    fs::write(&preds, anchor_rank_cli::records_to_jsonl(records)).unwrap();
    let p = s(&preds);
    let t = fixture("worked_example.jsonl");
    let mut args = vec!["--json", "evaluate", "--predictions", &p, "--corpus", &t, "--split", "test"];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn evaluate_scores_oracle_and_inverted_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let r = evaluate(dir.path(), &oracle_records(false), &["--threshold", "0.5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["ndcg_at_12"].as_f64(), Some(1.0));
    assert_eq!(v["micro"]["f1"].as_f64(), Some(1.0));

    let r = evaluate(dir.path(), &oracle_records(true), &["--threshold", "0.5"]);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert!(v["ndcg_at_12"].as_f64().unwrap() < 1.0);
}

#[test]
fn evaluate_needs_a_threshold_and_known_documents() {
    let dir = tempfile::tempdir().unwrap();
    let r = evaluate(dir.path(), &oracle_records(false), &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("threshold"), "{}", r.stderr);

    let mut records = oracle_records(false);
    records[0].doc_id = "ghost".into();
    let r = evaluate(dir.path(), &records, &["--threshold", "0.5"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("ghost"), "{}", r.stderr);
}

#[test]
fn gradcheck_flags_a_broken_gradient() {
    let ok = bin(&["gradcheck", "--model", "aggregation", "--seeds", "1"]);
    assert_eq!(ok.code, 0, "{}{}", ok.stdout, ok.stderr);
    let broken = bin(&["gradcheck", "--model", "aggregation", "--seeds", "1", "--break-gradient"]);
    assert_eq!(broken.code, 1, "{}", broken.stdout);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let r = bin(&["synth", "--out", &s(&out), "--seed", seed, "--train-docs", "20", "--validation-docs", "5", "--test-docs", "5"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        fs::read(out.join("corpus.jsonl")).unwrap()
    };
    assert_eq!(gen("a", "9"), gen("b", "9"));
    assert_ne!(gen("a", "9"), gen("c", "10"));
}

#[test]
fn caml_warns_about_codes_missing_from_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let r = bin(&["synth", "--out", &s(&data), "--seed", "1", "--codes", "12", "--train-docs", "10", "--validation-docs", "4", "--test-docs", "4", "--unseen-fraction", "0.5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let config = dir.path().join("caml.json");
    let mut cfg = tiny(ModelKind::Caml);
    cfg.epochs = 1;
    cfg.lambda = 0.0;
    fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let r = bin(&[
        "train", "--corpus", &s(&data.join("corpus.jsonl")), "--table", &s(&data.join("codes.tsv")),
        "--out", &s(&dir.path().join("run")), "--config", &s(&config),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning"), "{}", r.stderr);
}
