use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{build_model, BuildContext, Classifier, InputSpec};
use super::{probability, FeatureRecord, ModelConfig, ModelError, TrainingHistory};
use crate::ARTIFACT_FORMAT_VERSION;

const WEIGHTS_FILE: &str = "weights.safetensors";
const MODEL_FILE: &str = "model.json";
const FINGERPRINT_FILE: &str = "encoder_fingerprint.txt";
const HISTORY_FILE: &str = "history.csv";

/// FAKE probabilities, one forward pass per record so that a record's score
/// does not depend on what it is batched with.
pub fn predict_proba(model: &Classifier, records: &[FeatureRecord]) -> Result<Vec<f64>, ModelError> {
    records
        .par_iter()
        .map(|r| {
            let batch = model.batch(&[r])?;
            let z = model.forward(&batch, None)?.flatten_all()?.to_vec1::<f32>()?[0];
            Ok(probability(f64::from(z)))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    input: InputSpec,
    history: TrainingHistory,
}

/// A trained classifier with its history and the contextual encoder it was built against.
#[derive(Debug)]
pub struct TrainedModel {
    pub network: Classifier,
    pub history: TrainingHistory,
    pub encoder_fingerprint: Option<String>,
}

impl TrainedModel {
    pub fn predict_proba(&self, records: &[FeatureRecord]) -> Result<Vec<f64>, ModelError> {
        predict_proba(&self.network, records)
    }

    /// Writes `weights.safetensors`, `model.json`, `history.csv` and, when set, `encoder_fingerprint.txt`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        self.network.varmap.save(dir.join(WEIGHTS_FILE))?;
        let file = ModelFile {
            format_version: ARTIFACT_FORMAT_VERSION,
            config: self.network.config.clone(),
            input: self.network.input.clone(),
            history: self.history.clone(),
        };
        std::fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&file)?)?;
        std::fs::write(dir.join(HISTORY_FILE), self.history.to_csv())?;
        let fp = dir.join(FINGERPRINT_FILE);
        match &self.encoder_fingerprint {
            Some(f) => std::fs::write(fp, format!("{f}\n"))?,
            None if fp.exists() => std::fs::remove_file(fp)?,
            None => {}
        }
        Ok(())
    }

    /// Reverses [`save`](Self::save). A transformer front end needs `ctx.encoder`
    /// with the recorded fingerprint.
    pub fn load(dir: &Path, ctx: BuildContext) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(dir.join(MODEL_FILE))
            .map_err(|e| ModelError::Artifact(format!("{}: {e}", dir.join(MODEL_FILE).display())))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::Artifact(format!(
                "artifact format {} (this build reads {ARTIFACT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let encoder_fingerprint = match std::fs::read_to_string(dir.join(FINGERPRINT_FILE)) {
            Ok(s) => Some(s.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        if let (Some(want), Some(enc)) = (&encoder_fingerprint, ctx.encoder) {
            if enc.fingerprint() != want {
                return Err(ModelError::Artifact(format!(
                    "encoder fingerprint {} does not match the model's {want}",
                    enc.fingerprint()
                )));
            }
        }
        let ctx = BuildContext {
            frozen_table: None,
            ..ctx
        };
        let mut network = build_model(&file.config, &file.input, ctx)?;
        network.varmap.load(dir.join(WEIGHTS_FILE))?;
        Ok(Self {
            network,
            history: file.history,
            encoder_fingerprint,
        })
    }
}
