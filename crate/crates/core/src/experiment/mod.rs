//! Config-driven runs: single train/evaluate, the stance ablation,
//! stratified cross-validation and the backend-by-architecture grid.

mod config;

pub use config::{DataSection, ExperimentConfig, OutputSection, SplitSection, TrainSection};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    class_balance, load_dataset, make_folds, prepare, split_dataset, stratified_holdout, stratified_subsample,
    DatasetFormat, Label, PreparedArticle,
};
use crate::eval::{export_figures, MetricsReport, ModelSummary};
use crate::features::{Backend, Featurizer, Resources};
use crate::models::{build_model, predict_proba, train, Architecture, FeatureRecord, TrainedModel, TrainingHistory};
use crate::scoring::arch_slug;
use crate::stance::write_stance_csv;

const INCOMPLETE: &str = "INCOMPLETE";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, ExperimentError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError::Stage {
            stage,
            source: e.into(),
        })
    }
}

/// Where and with what a run executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub encoder_fingerprint: Option<String>,
}

impl Environment {
    fn capture(fingerprint: Option<String>) -> Self {
        Self {
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
            encoder_fingerprint: fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `single`, `ablation/stance_on`, `crossval/fold_2`, `grid/static/lstm`, ...
    pub kind: String,
    pub config_snapshot: String,
    pub overrides: Vec<String>,
    pub config_hash: String,
    pub effective_config: serde_json::Value,
    pub backend: Backend,
    pub architecture: Architecture,
    pub use_stance: bool,
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub history: TrainingHistory,
    pub split: SplitIds,
    pub wall_clock_seconds: f64,
    pub environment: Environment,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub stance_on: RunResult,
    pub stance_off: RunResult,
    /// `stance_on` minus `stance_off` test accuracy.
    pub test_accuracy_delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

impl MeanMetrics {
    fn of(runs: &[RunResult]) -> Self {
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Self {
            train_accuracy: mean(&|r| r.train.accuracy.value),
            val_accuracy: mean(&|r| r.val.accuracy.value),
            test_accuracy: mean(&|r| r.test.accuracy.value),
            precision: mean(&|r| r.test.precision.value),
            recall: mean(&|r| r.test.recall.value),
            f1: mean(&|r| r.test.f1.value),
            roc_auc: mean(&|r| r.test.roc_auc.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub k: usize,
    pub config_hash: String,
    pub mean: MeanMetrics,
    pub folds: Vec<RunResult>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub backend: Backend,
    pub architecture: Architecture,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub config_hash: String,
    pub rows: Vec<GridRow>,
    pub table_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub raw_articles: usize,
    pub prepared_articles: usize,
    pub balance: BTreeMap<Label, usize>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub data_dir: PathBuf,
}

/// Partition of corpus positions.
#[derive(Debug, Clone)]
struct Positions {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

struct Featurized {
    featurizer: Featurizer,
    records: Vec<FeatureRecord>,
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<(usize, Vec<PreparedArticle>), ExperimentError> {
    let raw = load_dataset(&cfg.data.path, DatasetFormat::Csv).stage("load")?;
    let prepared = prepare(&raw);
    if prepared.len() < raw.len() {
        log::warn!(
            "dropped {} articles that cleaned to nothing",
            raw.len() - prepared.len()
        );
    }
    let prepared = match cfg.data.subsample {
        Some(n) => stratified_subsample(&prepared, n, cfg.split.seed),
        None => prepared,
    };
    Ok((raw.len(), prepared))
}

fn single_split(cfg: &ExperimentConfig, articles: &[PreparedArticle]) -> Result<Positions, ExperimentError> {
    let spec = split_dataset(articles, cfg.split.ratios(), cfg.split.seed).stage("split")?;
    let (train, val, test) = spec.indices(articles);
    Ok(Positions { train, val, test })
}

fn cache_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.encoder.resolved_cache_dir(&cfg.output.dir.join("cache"))
}

fn featurize(
    cfg: &ExperimentConfig,
    articles: &[PreparedArticle],
    train_pos: &[usize],
    resources: &Resources,
) -> Result<Featurized, ExperimentError> {
    let train_articles: Vec<PreparedArticle> = train_pos.iter().map(|&i| articles[i].clone()).collect();
    let featurizer = Featurizer::fit(&cfg.encoder, &train_articles, resources).stage("featurize")?;
    let records = featurizer
        .featurize_all(articles, &cache_root(cfg))
        .stage("featurize")?;
    Ok(Featurized { featurizer, records })
}

fn pick<T: Clone>(items: &[T], pos: &[usize]) -> Vec<T> {
    pos.iter().map(|&i| items[i].clone()).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(value).map_err(std::io::Error::other)?,
    )
}

fn runs_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join("runs")
}

/// Records a finished run in `<output>/index.json` and points `<output>/latest` at it.
fn update_index(cfg: &ExperimentConfig, kind: &str, dir: &Path, test_accuracy: Option<f64>) -> std::io::Result<()> {
    let path = cfg.output.dir.join("index.json");
    let mut index: BTreeMap<String, serde_json::Value> = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    let rel = dir
        .strip_prefix(&cfg.output.dir)
        .unwrap_or(dir)
        .to_string_lossy()
        .into_owned();
    index.insert(
        rel.clone(),
        serde_json::json!({ "kind": kind, "config_hash": cfg.hash(), "test_accuracy": test_accuracy }),
    );
    write_json(&path, &index)?;
    std::fs::write(cfg.output.dir.join("latest"), format!("{rel}\n"))
}

/// Starts a run directory: creates it, writes the config snapshot and the incomplete marker.
fn open_run_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).stage("persist")?;
    std::fs::write(dir.join(INCOMPLETE), "").stage("persist")?;
    std::fs::write(dir.join("config.toml"), &cfg.source).stage("persist")?;
    if !cfg.overrides.is_empty() {
        std::fs::write(dir.join("overrides.txt"), cfg.overrides.join("\n") + "\n").stage("persist")?;
    }
    Ok(())
}

fn close_run_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::remove_file(dir.join(INCOMPLETE)).stage("persist")
}

/// Trains on `pos.train`, early-stops on `pos.val`, evaluates all three and persists under `dir`.
fn fit_and_evaluate(
    cfg: &ExperimentConfig,
    kind: &str,
    articles: &[PreparedArticle],
    pos: &Positions,
    feats: &Featurized,
    dir: &Path,
) -> Result<RunResult, ExperimentError> {
    let started = Instant::now();
    open_run_dir(cfg, dir)?;
    let (tr, va, te) = (
        pick(&feats.records, &pos.train),
        pick(&feats.records, &pos.val),
        pick(&feats.records, &pos.test),
    );
    let spec = feats.featurizer.input_spec(&cfg.model);
    let mut network = build_model(&cfg.model, &spec, feats.featurizer.build_context()).stage("train")?;
    let history = train(&mut network, &tr, &va, &cfg.hyperparams()).stage("train")?;

    let backend = feats.featurizer.backend();
    let report = |recs: &[FeatureRecord]| -> Result<(MetricsReport, Vec<f64>), ExperimentError> {
        let p = predict_proba(&network, recs).stage("evaluate")?;
        let y: Vec<u8> = recs.iter().map(|r| r.label).collect();
        let r = MetricsReport::from_scores(
            cfg.model.architecture.display_name(),
            backend.name(),
            &y,
            &p,
            cfg.output.threshold,
        )
        .stage("evaluate")?;
        Ok((r, p))
    };
    let (train_report, _) = report(&tr)?;
    let (val_report, _) = report(&va)?;
    let (test_report, test_p) = report(&te)?;

    let ids = |p: &[usize]| p.iter().map(|&i| articles[i].id.clone()).collect::<Vec<_>>();
    let split = SplitIds {
        train: ids(&pos.train),
        val: ids(&pos.val),
        test: ids(&pos.test),
    };
    let model_dir = dir.join("model");
    feats.featurizer.save(&model_dir).stage("persist")?;
    let trained = TrainedModel {
        network,
        history,
        encoder_fingerprint: feats.featurizer.encoder_fingerprint(),
    };
    trained.save(&model_dir).stage("persist")?;

    let mut w = csv::Writer::from_path(dir.join("predictions_test.csv")).stage("persist")?;
    w.write_record(["id", "label", "probability_fake"]).stage("persist")?;
    for (&i, p) in pos.test.iter().zip(&test_p) {
        w.write_record([articles[i].id.as_str(), &articles[i].label.to_string(), &p.to_string()])
            .stage("persist")?;
    }
    w.flush().stage("persist")?;

    if cfg.output.figures {
        let summary = ModelSummary {
            name: cfg.model.architecture.display_name().to_string(),
            train: train_report.clone(),
            test: test_report.clone(),
        };
        export_figures(&[summary], &dir.join("figures"), cfg.output.figure_format).stage("persist")?;
    }

    let result = RunResult {
        kind: kind.to_string(),
        config_snapshot: cfg.source.clone(),
        overrides: cfg.overrides.clone(),
        config_hash: cfg.hash(),
        effective_config: cfg.effective(),
        backend,
        architecture: cfg.model.architecture,
        use_stance: cfg.model.use_stance,
        train: train_report,
        val: val_report,
        test: test_report,
        history: trained.history,
        split,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        environment: Environment::capture(trained.encoder_fingerprint),
        run_dir: dir.to_path_buf(),
    };
    write_json(&dir.join("result.json"), &result).stage("persist")?;
    close_run_dir(dir)?;
    update_index(cfg, kind, dir, Some(result.test.accuracy.value)).stage("persist")?;
    log::info!(
        "{kind}: test accuracy {:.4} ({} {})",
        result.test.accuracy.value,
        backend,
        cfg.model.architecture
    );
    Ok(result)
}

/// Loads, cleans and splits the corpus; writes `prepared.csv` and `split.json` under `<output>/data`.
pub fn ingest(cfg: &ExperimentConfig) -> Result<IngestSummary, ExperimentError> {
    let (raw, articles) = load_corpus(cfg)?;
    let spec = split_dataset(&articles, cfg.split.ratios(), cfg.split.seed).stage("split")?;
    let data_dir = cfg.output.dir.join("data");
    std::fs::create_dir_all(&data_dir).stage("persist")?;
    std::fs::write(data_dir.join("split.json"), spec.to_json().stage("persist")?).stage("persist")?;
    let cleaned: Vec<crate::corpus::Article> = articles
        .iter()
        .map(|a| crate::corpus::Article {
            id: a.id.clone(),
            title: a.title.as_str().to_string(),
            body: a.body.as_str().to_string(),
            label: a.label,
        })
        .collect();
    let f = std::fs::File::create(data_dir.join("prepared.csv")).stage("persist")?;
    crate::corpus::write_csv(f, &cleaned).stage("persist")?;
    Ok(IngestSummary {
        raw_articles: raw,
        prepared_articles: articles.len(),
        balance: class_balance(&articles),
        train: spec.train_ids.len(),
        val: spec.val_ids.len(),
        test: spec.test_ids.len(),
        data_dir,
    })
}

/// Fits the featurizer on the training split, featurizes the whole corpus
/// (filling the embedding cache), and writes the featurizer and `stance.csv`
/// under `<output>/data`.
pub fn featurize_corpus(cfg: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let (_, articles) = load_corpus(cfg)?;
    let pos = single_split(cfg, &articles)?;
    let feats = featurize(cfg, &articles, &pos.train, &Resources::default())?;
    let dir = cfg
        .output
        .dir
        .join("data")
        .join(format!("featurizer_{}", feats.featurizer.backend()));
    feats.featurizer.save(&dir).stage("persist")?;
    let rows: Vec<(String, crate::stance::StanceScore)> = articles
        .iter()
        .zip(&feats.records)
        .map(|(a, r)| (a.id.clone(), r.stance))
        .collect();
    let f = std::fs::File::create(dir.join("stance.csv")).stage("persist")?;
    write_stance_csv(f, &rows).stage("persist")?;
    Ok(dir)
}

/// Load, clean, split, stance, encode, train, evaluate; persisted under
/// `<output>/runs/<config hash>`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    run_experiment_with(cfg, &Resources::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, resources: &Resources) -> Result<RunResult, ExperimentError> {
    let (_, articles) = load_corpus(cfg)?;
    let pos = single_split(cfg, &articles)?;
    let feats = featurize(cfg, &articles, &pos.train, resources)?;
    let dir = runs_root(cfg).join(cfg.hash());
    fit_and_evaluate(cfg, "single", &articles, &pos, &feats, &dir)
}

/// Two runs on one split and seed, with the stance feature on and off.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationResult, ExperimentError> {
    run_ablation_with(cfg, &Resources::default())
}

pub fn run_ablation_with(cfg: &ExperimentConfig, resources: &Resources) -> Result<AblationResult, ExperimentError> {
    let (_, articles) = load_corpus(cfg)?;
    let pos = single_split(cfg, &articles)?;
    let feats = featurize(cfg, &articles, &pos.train, resources)?;
    let root = runs_root(cfg).join(format!("{}-ablation", cfg.hash()));
    let on_cfg = cfg.overridden("model.use_stance=true")?;
    let off_cfg = cfg.overridden("model.use_stance=false")?;
    let stance_on = fit_and_evaluate(
        &on_cfg,
        "ablation/stance_on",
        &articles,
        &pos,
        &feats,
        &root.join("stance_on"),
    )?;
    let stance_off = fit_and_evaluate(
        &off_cfg,
        "ablation/stance_off",
        &articles,
        &pos,
        &feats,
        &root.join("stance_off"),
    )?;
    let result = AblationResult {
        test_accuracy_delta: stance_on.test.accuracy.value - stance_off.test.accuracy.value,
        stance_on,
        stance_off,
    };
    write_json(&root.join("ablation.json"), &result).stage("persist")?;
    Ok(result)
}

/// Stratified `split.k`-fold cross-validation. Each fold is the test set
/// once; a stratified `split.val` share of the rest is held out for early stopping.
pub fn run_crossval(cfg: &ExperimentConfig) -> Result<CrossValResult, ExperimentError> {
    run_crossval_with(cfg, &Resources::default())
}

pub fn run_crossval_with(cfg: &ExperimentConfig, resources: &Resources) -> Result<CrossValResult, ExperimentError> {
    let started = Instant::now();
    let (_, articles) = load_corpus(cfg)?;
    let k = cfg.split.k;
    let folds = make_folds(&articles, k, cfg.split.seed).stage("split")?;
    let root = runs_root(cfg).join(format!("{}-crossval", cfg.hash()));
    std::fs::create_dir_all(&root).stage("persist")?;
    write_json(&root.join("folds.json"), &folds).stage("persist")?;
    let mut runs = Vec::with_capacity(k);
    for fold in 0..k {
        let test = folds.fold_indices(&articles, fold);
        let rest: Vec<usize> = (0..articles.len()).filter(|i| !test.contains(i)).collect();
        let (train, val) = stratified_holdout(
            &articles,
            &rest,
            cfg.split.val,
            cfg.split.seed.wrapping_add(fold as u64),
        )
        .stage("split")?;
        let pos = Positions { train, val, test };
        let feats = featurize(cfg, &articles, &pos.train, resources)?;
        let kind = format!("crossval/fold_{fold}");
        runs.push(fit_and_evaluate(
            cfg,
            &kind,
            &articles,
            &pos,
            &feats,
            &root.join(format!("fold_{fold}")),
        )?);
    }
    let result = CrossValResult {
        k,
        config_hash: cfg.hash(),
        mean: MeanMetrics::of(&runs),
        folds: runs,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&root.join("crossval.json"), &result).stage("persist")?;
    Ok(result)
}

/// Every backend crossed with every architecture on one shared split.
/// A failing cell is recorded and the grid continues.
pub fn run_grid(
    cfg: &ExperimentConfig,
    backends: &[Backend],
    architectures: &[Architecture],
) -> Result<GridResult, ExperimentError> {
    run_grid_with(cfg, backends, architectures, &Resources::default())
}

pub fn run_grid_with(
    cfg: &ExperimentConfig,
    backends: &[Backend],
    architectures: &[Architecture],
    resources: &Resources,
) -> Result<GridResult, ExperimentError> {
    if backends.is_empty() || architectures.is_empty() {
        return Err(ExperimentError::Config("grid axes must be non-empty".into()));
    }
    let (_, articles) = load_corpus(cfg)?;
    let pos = single_split(cfg, &articles)?;
    let root = runs_root(cfg).join(format!("{}-grid", cfg.hash()));
    let mut rows = Vec::new();
    for &backend in backends {
        let bcfg = cfg.overridden(&format!("encoder.backend=\"{backend}\""))?;
        let feats = featurize(&bcfg, &articles, &pos.train, resources);
        let mut summaries = Vec::new();
        for &arch in architectures {
            let outcome = feats.as_ref().map_err(|e| e.to_string()).and_then(|feats| {
                let acfg = bcfg
                    .overridden(&format!("model.architecture=\"{}\"", arch_slug(arch)))
                    .map_err(|e| e.to_string())?;
                let dir = root.join(backend.name()).join(arch_slug(arch));
                fit_and_evaluate(
                    &acfg,
                    &format!("grid/{backend}/{}", arch_slug(arch)),
                    &articles,
                    &pos,
                    feats,
                    &dir,
                )
                .map_err(|e| e.to_string())
            });
            match outcome {
                Ok(r) => {
                    summaries.push(ModelSummary {
                        name: arch.display_name().to_string(),
                        train: r.train.clone(),
                        test: r.test.clone(),
                    });
                    rows.push(GridRow {
                        backend,
                        architecture: arch,
                        result: Some(r),
                        error: None,
                    });
                }
                Err(e) => {
                    log::error!("grid cell {backend}/{arch} failed: {e}");
                    rows.push(GridRow {
                        backend,
                        architecture: arch,
                        result: None,
                        error: Some(e),
                    });
                }
            }
        }
        if cfg.output.figures && !summaries.is_empty() {
            export_figures(
                &summaries,
                &root.join("figures").join(backend.name()),
                cfg.output.figure_format,
            )
            .stage("persist")?;
        }
    }
    std::fs::create_dir_all(&root).stage("persist")?;
    let table_csv = root.join("grid.csv");
    let mut w = csv::Writer::from_path(&table_csv).stage("persist")?;
    w.write_record([
        "backend",
        "architecture",
        "train_accuracy",
        "val_accuracy",
        "test_accuracy",
        "precision",
        "recall",
        "f1",
        "roc_auc",
        "error",
    ])
    .stage("persist")?;
    for row in &rows {
        let mut rec = vec![row.backend.to_string(), row.architecture.display_name().to_string()];
        match &row.result {
            Some(r) => {
                for v in [
                    r.train.accuracy.value,
                    r.val.accuracy.value,
                    r.test.accuracy.value,
                    r.test.precision.value,
                    r.test.recall.value,
                    r.test.f1.value,
                    r.test.roc_auc.value,
                ] {
                    rec.push(v.to_string());
                }
                rec.push(String::new());
            }
            None => {
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push(row.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&rec).stage("persist")?;
    }
    w.flush().stage("persist")?;
    let result = GridResult {
        config_hash: cfg.hash(),
        rows,
        table_csv,
    };
    write_json(&root.join("grid.json"), &result).stage("persist")?;
    Ok(result)
}
