//! Classifier heads (ANN, LSTM, Bi-LSTM, CNN, optional attention) over
//! token sequences plus the stance scalar, trained with binary cross-entropy.

mod artifact;
mod layers;
mod network;
mod record;
mod train;

pub use artifact::{predict_proba, TrainedModel};
pub use layers::AttentionPool;
pub use network::{build_model, BuildContext, Classifier, FrontEnd, InputSpec};
pub use record::{DenseRows, FeatureRecord, Sequence};
pub use train::{train, EpochStats, TrainingHistory};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

/// Probability clamp applied before taking logarithms.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("input does not match the model's feature spec: {0}")]
    SpecMismatch(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training needs non-empty train and validation sets")]
    EmptySet,
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Encode(#[from] crate::encode::EncodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Ann,
    Lstm,
    Bilstm,
    Cnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Ann,
        Architecture::Lstm,
        Architecture::Bilstm,
        Architecture::Cnn,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::Ann => "ANN",
            Architecture::Lstm => "LSTM",
            Architecture::Bilstm => "Bi-LSTM",
            Architecture::Cnn => "CNN",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ann" => Ok(Architecture::Ann),
            "lstm" => Ok(Architecture::Lstm),
            "bilstm" => Ok(Architecture::Bilstm),
            "cnn" => Ok(Architecture::Cnn),
            other => Err(ModelError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub recurrent_units: usize,
    pub conv_kernel: usize,
    pub conv_filters: usize,
    pub pool_window: usize,
    pub dense_units: usize,
    /// Width of the learned embedding used by the tokenizer backend.
    pub embedding_dim: usize,
    pub use_attention: bool,
    pub use_stance: bool,
    pub dropout: f32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cnn,
            recurrent_units: 64,
            conv_kernel: 5,
            conv_filters: 64,
            pool_window: 4,
            dense_units: 64,
            embedding_dim: 100,
            use_attention: false,
            use_stance: true,
            dropout: 0.1,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, seq_len: usize) -> Result<(), ModelError> {
        let sizes = [
            ("recurrent_units", self.recurrent_units),
            ("conv_kernel", self.conv_kernel),
            ("conv_filters", self.conv_filters),
            ("pool_window", self.pool_window),
            ("dense_units", self.dense_units),
            ("embedding_dim", self.embedding_dim),
            ("seq_len", seq_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.architecture == Architecture::Cnn {
            if self.conv_kernel > seq_len {
                return Err(ModelError::Config(format!(
                    "conv kernel {} longer than sequence {seq_len}",
                    self.conv_kernel
                )));
            }
            if !self.use_attention && seq_len - self.conv_kernel + 1 < self.pool_window {
                return Err(ModelError::Config("sequence too short for one pooling window".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyperparams {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 20,
            learning_rate: 1e-3,
            early_stop_patience: 3,
        }
    }
}

impl TrainHyperparams {
    /// Default step size when gradients also flow into the transformer.
    pub const FINE_TUNE_LEARNING_RATE: f64 = 1e-5;

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(ModelError::Config(
                "batch size, epochs and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn binary_cross_entropy(y: u8, p: f64) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    let y = f64::from(y.min(1));
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// FAKE iff `p >= threshold`.
pub fn classify(p: f64, threshold: f64) -> Label {
    if p >= threshold {
        Label::Fake
    } else {
        Label::Real
    }
}

/// Logistic function in double precision, clamped like the loss.
pub fn probability(logit: f64) -> f64 {
    (1.0 / (1.0 + (-logit).exp())).clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}
