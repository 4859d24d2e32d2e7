use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::corpus::SplitRatios;
use crate::eval::FigureFormat;
use crate::features::EncoderSettings;
use crate::models::{ModelConfig, TrainHyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV with `title`, `text`, `label` columns.
    pub path: PathBuf,
    /// Stratified draw of this many prepared articles before splitting.
    pub subsample: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/fake_or_real_news.csv"),
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub seed: u64,
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Folds for cross-validation.
    pub k: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            seed: 42,
            train: r.train,
            val: r.val,
            test: r.test,
            k: 5,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

/// `[train]`; a missing `learning_rate` resolves by encoder mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: Option<f64>,
    pub early_stop_patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainHyperparams::default();
        Self {
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            learning_rate: None,
            early_stop_patience: d.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub threshold: f64,
    pub figures: bool,
    pub figure_format: FigureFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            threshold: 0.5,
            figures: true,
            figure_format: FigureFormat::Svg,
        }
    }
}

/// Everything one experiment needs. Parsed from TOML with one table per section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub encoder: EncoderSettings,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub output: OutputSection,
    /// Original config text, byte for byte.
    #[serde(skip)]
    pub source: String,
    /// `section.key=value` overrides applied on top of `source`, in order.
    #[serde(skip)]
    pub overrides: Vec<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        Self::with_overrides::<&str>(text, &[])
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parses `text` and applies `section.key=value` overrides. Values are
    /// read as TOML literals, falling back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("override `{o}` is not key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| ExperimentError::Config(format!("override key `{key}` is not section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(ExperimentError::Config(format!("`{section}` is not a section")));
            };
            t.insert(field.to_string(), parse_value(raw.trim()));
        }
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        cfg.source = text.to_string();
        cfg.overrides = overrides.iter().map(|o| o.as_ref().trim().to_string()).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    /// A copy with one more override applied.
    pub fn overridden(&self, o: &str) -> Result<Self, ExperimentError> {
        let mut all = self.overrides.clone();
        all.push(o.to_string());
        Self::with_overrides(&self.source, &all)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let r = self.split.ratios();
        let parts = [r.train, r.val, r.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ExperimentError::Config(format!("split ratios {parts:?} must sum to 1")));
        }
        if self.split.k < 2 {
            return Err(ExperimentError::Config("split.k must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.output.threshold) {
            return Err(ExperimentError::Config("output.threshold must lie in [0, 1]".into()));
        }
        self.hyperparams()
            .validate()
            .and_then(|_| self.model.validate(self.encoder.max_len))
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn hyperparams(&self) -> TrainHyperparams {
        let lr = self.train.learning_rate.unwrap_or(if self.encoder.fine_tune {
            TrainHyperparams::FINE_TUNE_LEARNING_RATE
        } else {
            TrainHyperparams::default().learning_rate
        });
        TrainHyperparams {
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            learning_rate: lr,
            early_stop_patience: self.train.early_stop_patience,
        }
    }

    /// First 16 hex digits of sha256 over the source text and overrides.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.source.as_bytes());
        for o in &self.overrides {
            h.update(b"\n--set ");
            h.update(o.as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// The resolved settings, including defaults, as JSON.
    pub fn effective(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
