//! Single-article scoring with a saved featurizer and model, shared by the
//! HTTP service and the `predict` command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{clean_text, Label, PreparedArticle};
use crate::eval::{EvalError, MetricsReport};
use crate::features::{FeatureError, Featurizer};
use crate::models::{classify, predict_proba, ModelError, TrainedModel};

/// Upper bound on `title` plus `text`, in bytes.
pub const MAX_REQUEST_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("incompatible artifacts: {0}")]
    Version(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub label: Label,
    pub probability_fake: f64,
    pub stance: f64,
    pub model_version: String,
}

/// An immutable featurizer and model pair.
#[derive(Debug)]
pub struct Scorer {
    featurizer: Featurizer,
    model: TrainedModel,
    threshold: f64,
    model_version: String,
    model_dir: PathBuf,
}

impl Scorer {
    /// Loads a run's `model/` directory. `encoder_dir` overrides the
    /// checkpoint location recorded at training time.
    pub fn load(model_dir: &Path, encoder_dir: Option<&Path>, threshold: f64) -> Result<Self, ScoreError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ScoreError::Validation(format!("threshold {threshold} outside [0, 1]")));
        }
        let featurizer = Featurizer::load(model_dir, encoder_dir).map_err(|e| match e {
            FeatureError::Version(m) => ScoreError::Version(m),
            other => other.into(),
        })?;
        let model = TrainedModel::load(model_dir, featurizer.build_context()).map_err(|e| match e {
            ModelError::Artifact(m) => ScoreError::Version(m),
            other => other.into(),
        })?;
        if model.encoder_fingerprint != featurizer.encoder_fingerprint() {
            return Err(ScoreError::Version(format!(
                "model expects encoder {:?}, featurizer has {:?}",
                model.encoder_fingerprint,
                featurizer.encoder_fingerprint()
            )));
        }
        let weights = std::fs::read(model_dir.join("weights.safetensors"))?;
        let digest = hex::encode(Sha256::digest(&weights));
        let arch = model.network.config().architecture;
        let model_version = format!("{}-{}-{}", arch_slug(arch), featurizer.backend(), &digest[..12]);
        Ok(Self {
            featurizer,
            model,
            threshold,
            model_version,
            model_dir: model_dir.to_path_buf(),
        })
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn model_dir(&self) -> &Path {
        &self.model_dir
    }

    /// Cleans, computes stance, encodes and classifies one article.
    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        if req.title.len() + req.text.len() > MAX_REQUEST_BYTES {
            return Err(ScoreError::Validation(format!(
                "title and text exceed {MAX_REQUEST_BYTES} bytes"
            )));
        }
        let article = PreparedArticle {
            id: String::new(),
            title: clean_text(&req.title),
            body: clean_text(&req.text),
            label: Label::Real,
        };
        if article.title.is_empty() && article.body.is_empty() {
            return Err(ScoreError::Validation(
                "title and text are both empty after cleaning".into(),
            ));
        }
        let record = self.featurizer.featurize(&article)?;
        let stance = record.stance.value;
        let p = predict_proba(&self.model.network, std::slice::from_ref(&record))?[0];
        Ok(ScoreResponse {
            label: classify(p, self.threshold),
            probability_fake: p,
            stance,
            model_version: self.model_version.clone(),
        })
    }

    /// FAKE probabilities for a corpus, through the embedding cache under `cache_root`.
    pub fn predict_batch(&self, articles: &[PreparedArticle], cache_root: &Path) -> Result<Vec<f64>, ScoreError> {
        let records = self.featurizer.featurize_all(articles, cache_root)?;
        Ok(predict_proba(&self.model.network, &records)?)
    }

    /// Metrics of the loaded model on a labelled corpus.
    pub fn evaluate(&self, articles: &[PreparedArticle], cache_root: &Path) -> Result<MetricsReport, ScoreError> {
        let p = self.predict_batch(articles, cache_root)?;
        let y: Vec<u8> = articles.iter().map(|a| a.label.target()).collect();
        Ok(MetricsReport::from_scores(
            self.model.network.config().architecture.display_name(),
            self.featurizer.backend().name(),
            &y,
            &p,
            self.threshold,
        )?)
    }
}

pub(crate) fn arch_slug(a: crate::models::Architecture) -> &'static str {
    use crate::models::Architecture::*;
    match a {
        Ann => "ann",
        Lstm => "lstm",
        Bilstm => "bilstm",
        Cnn => "cnn",
    }
}
