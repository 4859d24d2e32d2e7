use std::collections::BTreeSet;
use std::path::Path;

use stancecred::corpus::{prepare, write_csv};
use stancecred::experiment::{run_ablation, run_crossval, run_experiment, run_grid, ExperimentConfig, ExperimentError};
use stancecred::features::Backend;
use stancecred::models::Architecture;
use stancecred::scoring::{ScoreError, ScoreRequest, Scorer};
use stancecred::testkit::{synthetic_corpus, write_tiny_checkpoint};

fn write_corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("news.csv");
    write_csv(std::fs::File::create(&path).unwrap(), &synthetic_corpus(n, 11)).unwrap();
    path
}

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let data = write_corpus(dir, 120);
    let text = format!(
        r#"
[data]
path = "{}"
subsample = 50

[encoder]
backend = "tokenizer"
max_len = 48

[model]
architecture = "cnn"
conv_filters = 8
dense_units = 8
embedding_dim = 16

[train]
batch_size = 8
max_epochs = 4

[output]
dir = "{}"
figures = false
{extra}
"#,
        data.display(),
        dir.join("out").display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

#[test]
fn smoke_run_completes_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let r = run_experiment(&cfg).unwrap();
    for rep in [&r.train, &r.val, &r.test] {
        for m in [rep.accuracy, rep.precision, rep.recall, rep.f1, rep.roc_auc] {
            assert!(in_unit(m.value), "{m:?}");
        }
    }
    assert_eq!(r.split.train.len() + r.split.val.len() + r.split.test.len(), 50);
    for f in [
        "config.toml",
        "result.json",
        "predictions_test.csv",
        "model/featurizer.json",
        "model/model.json",
    ] {
        assert!(r.run_dir.join(f).exists(), "{f}");
    }
    assert!(!r.run_dir.join("INCOMPLETE").exists());
    let latest = std::fs::read_to_string(cfg.output.dir.join("latest")).unwrap();
    assert_eq!(cfg.output.dir.join(latest.trim()), r.run_dir);
    assert_eq!(r.config_hash, cfg.hash());
}

#[test]
fn repeated_runs_are_identical() {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&config(a_dir.path(), "")).unwrap();
    let b = run_experiment(&config(b_dir.path(), "")).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
    assert_eq!(a.test, b.test);
    assert_eq!(a.history, b.history);
    assert_eq!(a.split, b.split);
}

#[test]
fn overrides_change_the_hash_and_the_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = cfg.overridden("model.architecture=ann").unwrap();
    assert_eq!(o.model.architecture, Architecture::Ann);
    assert_ne!(o.hash(), cfg.hash());
    assert!(matches!(
        cfg.overridden("model.nope=1"),
        Err(ExperimentError::Config(_))
    ));
    assert!(matches!(
        cfg.overridden("split.train=0.9"),
        Err(ExperimentError::Config(_))
    ));
}

#[test]
fn ablation_shares_split_and_differs_only_in_stance() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_ablation(&config(dir.path(), "")).unwrap();
    assert_eq!(r.stance_on.split, r.stance_off.split);
    assert!(r.stance_on.use_stance && !r.stance_off.use_stance);
    let mut on = r.stance_on.effective_config.clone();
    on["model"]["use_stance"] = serde_json::Value::Bool(false);
    assert_eq!(on, r.stance_off.effective_config);
    let delta = r.stance_on.test.accuracy.value - r.stance_off.test.accuracy.value;
    assert!((r.test_accuracy_delta - delta).abs() < 1e-12);
}

#[test]
fn crossval_partitions_the_corpus_and_averages_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "").overridden("split.k=3").unwrap();
    let r = run_crossval(&cfg).unwrap();
    assert_eq!(r.folds.len(), 3);
    let mut seen = BTreeSet::new();
    for f in &r.folds {
        for id in &f.split.test {
            assert!(seen.insert(id.clone()), "{id} tested twice");
        }
        let inside: BTreeSet<_> = f.split.train.iter().chain(&f.split.val).collect();
        assert!(f.split.test.iter().all(|id| !inside.contains(id)));
    }
    assert_eq!(seen.len(), 50);
    let mean = r.folds.iter().map(|f| f.test.accuracy.value).sum::<f64>() / 3.0;
    assert!((r.mean.test_accuracy - mean).abs() < 1e-9);
}

#[test]
fn grid_records_every_cell_and_matches_standalone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let r = run_grid(
        &cfg,
        &[Backend::Tokenizer, Backend::Contextual],
        &[Architecture::Ann, Architecture::Cnn],
    )
    .unwrap();
    assert_eq!(r.rows.len(), 4);
    let csv = std::fs::read_to_string(&r.table_csv).unwrap();
    assert_eq!(csv.lines().count(), 5);
    // No checkpoint is configured, so both contextual cells fail without stopping the grid.
    for row in &r.rows {
        assert_eq!(row.result.is_some(), row.backend == Backend::Tokenizer, "{row:?}");
        assert_eq!(row.error.is_some(), row.backend == Backend::Contextual);
    }
    let cell = r
        .rows
        .iter()
        .find(|c| c.architecture == Architecture::Cnn && c.result.is_some())
        .unwrap();
    let alone = run_experiment(&cfg).unwrap();
    let cell = cell.result.as_ref().unwrap();
    assert_eq!(cell.test, alone.test);
    assert_eq!(cell.history, alone.history);
}

#[test]
fn scorer_reproduces_run_predictions_with_contextual_features() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    write_tiny_checkpoint(&ckpt, 5).unwrap();
    let mut cfg = config(dir.path(), "\n[split]\nseed = 3\n");
    cfg = cfg
        .overridden("encoder.backend=contextual")
        .unwrap()
        .overridden(&format!("encoder.checkpoint_dir=\"{}\"", ckpt.display()))
        .unwrap();
    let r = run_experiment(&cfg).unwrap();
    let scorer = Scorer::load(&r.run_dir.join("model"), None, 0.5).unwrap();
    assert!(scorer.model_version().starts_with("cnn-contextual-"));

    let raw = synthetic_corpus(120, 11);
    let csv = std::fs::read_to_string(r.run_dir.join("predictions_test.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let mut checked = 0;
    for row in rows.records() {
        let row = row.unwrap();
        let a = raw.iter().find(|a| a.id == row[0]).unwrap();
        let resp = scorer
            .score(&ScoreRequest {
                title: a.title.clone(),
                text: a.body.clone(),
            })
            .unwrap();
        let batch: f64 = row[2].parse().unwrap();
        assert_eq!(resp.probability_fake.to_bits(), batch.to_bits(), "{}", a.id);
        checked += 1;
    }
    assert!(checked > 0);

    let same = scorer
        .score(&ScoreRequest {
            title: "storm floods the coast".into(),
            text: "storm floods the coast".into(),
        })
        .unwrap();
    assert!((same.stance - 1.0).abs() < 1e-6);
    let empty = scorer.score(&ScoreRequest {
        title: " <br> ".into(),
        text: "".into(),
    });
    assert!(matches!(empty, Err(ScoreError::Validation(_))));

    let other = dir.path().join("other");
    write_tiny_checkpoint(&other, 99).unwrap();
    let mismatch = Scorer::load(&r.run_dir.join("model"), Some(&other), 0.5);
    assert!(matches!(mismatch, Err(ScoreError::Version(_))), "{mismatch:?}");

    let prepared = prepare(&raw);
    let report = scorer.evaluate(&prepared, &dir.path().join("cache")).unwrap();
    assert_eq!(report.n, prepared.len());
}
