use std::path::Path;
use std::process::Command;

use stancecred::corpus::write_csv;
use stancecred::testkit::synthetic_corpus;

fn stancecred(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_stancecred"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "exp.toml"])
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn ingest_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(
        std::fs::File::create(dir.path().join("news.csv")).unwrap(),
        &synthetic_corpus(60, 4),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        r#"
[data]
path = "news.csv"
[encoder]
backend = "tokenizer"
max_len = 32
[model]
architecture = "ann"
dense_units = 8
embedding_dim = 8
[train]
max_epochs = 2
[output]
dir = "out"
"#,
    )
    .unwrap();

    let ingest: serde_json::Value = serde_json::from_slice(&stancecred(dir.path(), &["ingest"]).stdout).unwrap();
    assert_eq!(ingest["prepared_articles"], 60);
    assert!(dir.path().join("out/data/split.json").exists());

    stancecred(
        dir.path(),
        &[
            "train",
            "--set",
            "model.architecture=lstm",
            "--set",
            "model.recurrent_units=4",
        ],
    );
    let latest = std::fs::read_to_string(dir.path().join("out/latest")).unwrap();
    let run = dir.path().join("out").join(latest.trim());
    assert!(run.join("figures").is_dir());
    let snapshot = std::fs::read_to_string(run.join("result.json")).unwrap();
    assert!(snapshot.contains("model.architecture=lstm"));

    let p = stancecred(dir.path(), &["predict", "--input", "news.csv", "--output", "pred.csv"]);
    assert!(p.stdout.is_empty());
    let pred = std::fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 61);
    assert!(pred.starts_with("id,label,probability_fake,stance"));

    let one = stancecred(dir.path(), &["predict", "--title", "vote", "--text", "vote"]);
    let v: serde_json::Value = serde_json::from_slice(&one.stdout).unwrap();
    assert!((v["stance"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let eval: serde_json::Value = serde_json::from_slice(&stancecred(dir.path(), &["evaluate"]).stdout).unwrap();
    assert_eq!(eval["n"], 60);
    assert_eq!(eval["model"], "LSTM");
}

#[test]
fn bad_override_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stancecred"))
        .current_dir(dir.path())
        .args(["--config", "exp.toml", "--set", "model.dropout=2", "train"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dropout"));
}
