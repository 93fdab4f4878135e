//! End-to-end checks of the `edseq` binary: the full pipeline runs, outputs
//! are deterministic, and failures surface as single-line errors.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edseq_core::corpus::{load_corpus, sentence_id};
use edseq_core::infer::{save_predictions, PredictedEvent, Prediction};
use edseq_core::schema::EventSchema;

const SMALL_CONFIG: &str = r#"
seed = 11

[model]
d_emb = 12
d_h = 12
s_dim = 24
d_lab = 8

[train]
epochs = 2
batch_size = 8
learning_rate = 0.01

[decode]
beam_width = 2
max_len = 6
threshold = "tune"

[synth]
docs_per_domain = 12
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edseq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_completes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();

    ok(dir, &["synth", "--config", "cfg.toml"]);
    ok(dir, &["split", "--config", "cfg.toml"]);
    ok(dir, &["train", "--config", "cfg.toml"]);

    // tune-threshold rewrites the "tune" placeholder with the grid winner.
    let out = ok(dir, &["tune-threshold", "--config", "cfg.toml"]);
    assert!(out.contains("tau_star="), "{out}");
    let echoed = fs::read_to_string(dir.join("cfg.toml")).unwrap();
    assert!(echoed.contains("threshold = 0."), "threshold not echoed:\n{echoed}");

    ok(dir, &["predict", "--config", "cfg.toml"]);
    let out = ok(dir, &["eval", "--config", "cfg.toml"]);
    assert!(out.contains("identification: P="), "{out}");
    let report = fs::read_to_string(dir.join("run/eval_report.txt")).unwrap();
    assert!(report.contains("classification.f1 = "), "{report}");
    assert!(report.contains("config.seed = 11"), "config echo missing:\n{report}");

    let out = ok(dir, &["analyze", "--config", "cfg.toml"]);
    assert!(out.contains("avg_wasserstein="), "{out}");

    // Same config, same seed: training twice writes identical bytes.
    let log1 = fs::read(dir.join("run/loss_log.txt")).unwrap();
    let ckpt1 = fs::read(dir.join("run/checkpoint.json")).unwrap();
    ok(dir, &["train", "--config", "cfg.toml"]);
    assert_eq!(log1, fs::read(dir.join("run/loss_log.txt")).unwrap());
    assert_eq!(ckpt1, fs::read(dir.join("run/checkpoint.json")).unwrap());
}

#[test]
fn eval_of_gold_as_predictions_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    ok(dir, &["synth", "--config", "cfg.toml"]);

    let corpus = load_corpus(dir.join("run/corpus.jsonl"), &EventSchema::default()).unwrap();
    let preds: Vec<Prediction> = corpus
        .documents
        .iter()
        .flat_map(|doc| {
            doc.sentences.iter().enumerate().map(|(si, sent)| Prediction {
                id: sentence_id(&doc.id, si),
                events: sent
                    .mentions
                    .iter()
                    .map(|m| PredictedEvent {
                        type_name: m.type_name.clone(),
                        start: m.start,
                        end: m.end,
                    })
                    .collect(),
            })
        })
        .collect();
    save_predictions(&preds, dir.join("gold_preds.jsonl")).unwrap();

    let out = ok(
        dir,
        &[
            "eval",
            "--config",
            "cfg.toml",
            "--gold",
            "run/corpus.jsonl",
            "--predictions",
            "gold_preds.jsonl",
        ],
    );
    assert!(out.contains("identification: P=1 R=1 F1=1"), "{out}");
    assert!(out.contains("classification: P=1 R=1 F1=1"), "{out}");
}

#[test]
fn analyze_reports_kappa_and_mismatch_when_given_extras() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    ok(dir, &["synth", "--config", "cfg.toml"]);

    // Segmentation that groups every sentence into single-token words keeps
    // all triggers span-aligned except multi-token ones (cross-word).
    let corpus = load_corpus(dir.join("run/corpus.jsonl"), &EventSchema::default()).unwrap();
    let mut seg = String::new();
    for (_, sent) in corpus.sentences() {
        seg.push_str(&sent.tokens.join("/"));
        seg.push('\n');
    }
    fs::write(dir.join("seg.txt"), seg).unwrap();
    fs::write(dir.join("paired.json"), r#"{"a": ["x", "y", "x"], "b": ["x", "y", "y"]}"#).unwrap();

    let out = ok(
        dir,
        &[
            "analyze",
            "--config",
            "cfg.toml",
            "--segmentation",
            "seg.txt",
            "--paired",
            "paired.json",
        ],
    );
    assert!(out.contains("kappa="), "{out}");
    assert!(out.contains("mismatch:"), "{out}");
    let report = fs::read_to_string(dir.join("run/analysis_report.txt")).unwrap();
    assert!(report.contains("heterogeneity.avg_wasserstein = "), "{report}");
    assert!(report.contains("mismatch.regular_pct = "), "{report}");
    assert!(report.contains("kappa = "), "{report}");
}

#[test]
fn failures_exit_nonzero_with_one_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Missing corpus file.
    let out = run(dir, &["split"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "expected one line, got:\n{stderr}");
    assert!(stderr.starts_with("error: "), "{stderr}");

    // Invalid config values are all named at once.
    fs::write(
        dir.join("bad.toml"),
        "[train]\nrho = 4.0\n[decode]\nthreshold = 1.5\n",
    )
    .unwrap();
    let out = run(dir, &["synth", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("train.rho"), "{stderr}");
    assert!(stderr.contains("decode.threshold"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1, "{stderr}");

    // Unknown config key is named.
    fs::write(dir.join("huh.toml"), "mystery = 1\n").unwrap();
    let out = run(dir, &["synth", "--config", "huh.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("mystery"));

    // predict without a concrete threshold points at tune-threshold.
    fs::write(dir.join("cfg.toml"), SMALL_CONFIG).unwrap();
    ok(dir, &["synth", "--config", "cfg.toml"]);
    ok(dir, &["split", "--config", "cfg.toml"]);
    ok(dir, &["train", "--config", "cfg.toml"]);
    let out = run(dir, &["predict", "--config", "cfg.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("tune-threshold"));
    // ...but an explicit --tau unblocks it.
    ok(dir, &["predict", "--config", "cfg.toml", "--tau", "0.3"]);
}
