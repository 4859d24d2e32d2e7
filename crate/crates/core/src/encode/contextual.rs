use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokenizers::Tokenizer;

use super::transformer::{DistilBert, TransformerConfig};
use super::{pool, EncodeError, Matrix, PooledVector};
use crate::corpus::CleanText;

/// Token ids, attention mask and final-layer vectors for one text, padded
/// to a fixed length. Vectors at padded positions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEncoding {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub vectors: Matrix,
}

impl ContextualEncoding {
    pub fn pooled(&self) -> Result<PooledVector, EncodeError> {
        pool(&self.vectors, &self.attention_mask)
    }
}

/// Where a checkpoint lives and what it looks like.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInfo {
    pub checkpoint_dir: PathBuf,
    pub fingerprint: String,
    pub dim: usize,
    pub n_layers: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub pad_id: u32,
}

/// A frozen distilled bidirectional transformer plus its subword tokenizer.
pub struct ContextualEncoder {
    info: EncoderInfo,
    config: TransformerConfig,
    weights: PathBuf,
    model: DistilBert,
    tokenizer: Tokenizer,
    cls_id: u32,
    sep_id: u32,
}

impl std::fmt::Debug for ContextualEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContextualEncoder")
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

fn unavailable(what: impl std::fmt::Display) -> EncodeError {
    EncodeError::EncoderUnavailable(what.to_string())
}

fn hash_file(hasher: &mut Sha256, path: &Path) -> Result<(), EncodeError> {
    let mut f = std::fs::File::open(path).map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(())
}

/// Encoder tensors as `f32`, named without any task-head prefix.
fn load_tensors(weights: &Path) -> Result<HashMap<String, Tensor>, EncodeError> {
    let loaded = if weights.extension().is_some_and(|e| e == "safetensors") {
        candle_core::safetensors::load(weights, &Device::Cpu).map(|m| m.into_iter().collect())
    } else {
        candle_core::pickle::read_all(weights)
    };
    let loaded = loaded.map_err(|e| unavailable(format!("{}: {e}", weights.display())))?;
    let prefixed = loaded.iter().any(|(k, _)| k.starts_with("distilbert."));
    let mut out = HashMap::new();
    for (name, t) in loaded {
        let name = if prefixed {
            match name.strip_prefix("distilbert.") {
                Some(rest) => rest.to_string(),
                None => continue,
            }
        } else {
            name
        };
        if !(name.starts_with("embeddings.") || name.starts_with("transformer.")) {
            continue;
        }
        let name = match name.rsplit_once('.') {
            Some((head, "gamma")) => format!("{head}.weight"),
            Some((head, "beta")) => format!("{head}.bias"),
            _ => name,
        };
        out.insert(name, t.to_dtype(DType::F32)?);
    }
    Ok(out)
}

impl ContextualEncoder {
    /// Loads `config.json`, `tokenizer.json` and `model.safetensors`
    /// (or `pytorch_model.bin`) from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EncodeError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(unavailable(format!("checkpoint directory {} not found", dir.display())));
        }
        let config_path = dir.join("config.json");
        let tokenizer_path = dir.join("tokenizer.json");
        let weights = ["model.safetensors", "pytorch_model.bin"]
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| unavailable(format!("no model weights in {}", dir.display())))?;

        let config_text = std::fs::read_to_string(&config_path)
            .map_err(|e| unavailable(format!("{}: {e}", config_path.display())))?;
        let config: TransformerConfig =
            serde_json::from_str(&config_text).map_err(|e| unavailable(format!("config.json: {e}")))?;

        let mut tokenizer = Tokenizer::from_file(&tokenizer_path)
            .map_err(|e| unavailable(format!("{}: {e}", tokenizer_path.display())))?;
        tokenizer
            .with_truncation(None)
            .map_err(|e| unavailable(format!("tokenizer: {e}")))?;
        tokenizer.with_padding(None);
        let special = |t: &str| {
            tokenizer
                .token_to_id(t)
                .ok_or_else(|| unavailable(format!("tokenizer has no {t} token")))
        };
        let cls_id = special("[CLS]")?;
        let sep_id = special("[SEP]")?;

        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        hash_file(&mut hasher, &tokenizer_path)?;
        hash_file(&mut hasher, &weights)?;
        let fingerprint = hex::encode(&hasher.finalize()[..16]);

        let tensors = load_tensors(&weights)?;
        let vb = VarBuilder::from_tensors(tensors, DType::F32, &Device::Cpu);
        let model = DistilBert::load(vb, &config).map_err(|e| unavailable(format!("weights: {e}")))?;

        let info = EncoderInfo {
            checkpoint_dir: dir.to_path_buf(),
            fingerprint,
            dim: config.dim,
            n_layers: config.n_layers,
            max_positions: config.max_position_embeddings,
            vocab_size: config.vocab_size,
            pad_id: config.pad_token_id,
        };
        log::info!(
            "loaded encoder {} ({} layers, dim {}, fingerprint {})",
            dir.display(),
            info.n_layers,
            info.dim,
            info.fingerprint
        );
        Ok(Self {
            info,
            config,
            weights,
            model,
            tokenizer,
            cls_id,
            sep_id,
        })
    }

    pub fn info(&self) -> &EncoderInfo {
        &self.info
    }

    pub fn dim(&self) -> usize {
        self.info.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.info.fingerprint
    }

    fn check_len(&self, max_len: usize) -> Result<(), EncodeError> {
        if max_len > self.info.max_positions {
            return Err(EncodeError::Config(format!(
                "max_len {max_len} exceeds the checkpoint limit of {}",
                self.info.max_positions
            )));
        }
        if max_len < 2 {
            return Err(EncodeError::Config(
                "max_len must leave room for [CLS] and [SEP]".into(),
            ));
        }
        Ok(())
    }

    /// Subword ids without boundary tokens.
    pub fn subword_ids(&self, text: &str) -> Result<Vec<u32>, EncodeError> {
        let enc = self
            .tokenizer
            .encode(text, false)
            .map_err(|e| EncodeError::Config(format!("tokenizer: {e}")))?;
        Ok(enc.get_ids().to_vec())
    }

    /// `[CLS] text [SEP]`, keeping the head when longer than `max_len`.
    pub fn token_ids(&self, text: &CleanText, max_len: usize) -> Result<Vec<u32>, EncodeError> {
        self.check_len(max_len)?;
        let mut ids = vec![self.cls_id];
        ids.extend(self.subword_ids(text.as_str())?.into_iter().take(max_len - 2));
        ids.push(self.sep_id);
        Ok(ids)
    }

    /// `[CLS] title [SEP] body [SEP]`, truncated head-first to `max_len`.
    pub fn pair_token_ids(&self, title: &CleanText, body: &CleanText, max_len: usize) -> Result<Vec<u32>, EncodeError> {
        self.check_len(max_len)?;
        let mut ids = vec![self.cls_id];
        ids.extend(self.subword_ids(title.as_str())?);
        ids.push(self.sep_id);
        ids.extend(self.subword_ids(body.as_str())?);
        ids.truncate(max_len - 1);
        ids.push(self.sep_id);
        Ok(ids)
    }

    /// Final hidden states for an unpadded id sequence, `len x dim`.
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Matrix, EncodeError> {
        let n = ids.len();
        let input = Tensor::from_slice(ids, (1, n), &Device::Cpu)?;
        let out = self.model.forward(&input, None)?.squeeze(0)?;
        let (rows, cols) = out.dims2()?;
        Ok(Matrix {
            rows,
            cols,
            data: out.flatten_all()?.to_vec1::<f32>()?,
        })
    }

    fn padded(&self, ids: Vec<u32>, max_len: usize) -> Result<ContextualEncoding, EncodeError> {
        let real = ids.len();
        let states = self.hidden_states(&ids)?;
        let mut vectors = Matrix::zeros(max_len, states.cols);
        vectors.data[..states.data.len()].copy_from_slice(&states.data);
        let mut token_ids = ids;
        token_ids.resize(max_len, self.info.pad_id);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(max_len, 0);
        Ok(ContextualEncoding {
            token_ids,
            attention_mask,
            vectors,
        })
    }

    /// Inference-mode encoding of a single text.
    pub fn encode(&self, text: &CleanText, max_len: usize) -> Result<ContextualEncoding, EncodeError> {
        let ids = self.token_ids(text, max_len)?;
        self.padded(ids, max_len)
    }

    pub fn encode_pair(
        &self,
        title: &CleanText,
        body: &CleanText,
        max_len: usize,
    ) -> Result<ContextualEncoding, EncodeError> {
        let ids = self.pair_token_ids(title, body, max_len)?;
        self.padded(ids, max_len)
    }

    /// Builds a second copy of the transformer whose weights are trainable
    /// variables registered in `varmap` under `encoder.`.
    pub fn trainable_copy(&self, varmap: &VarMap) -> Result<DistilBert, EncodeError> {
        {
            let mut data = varmap.data().lock().expect("varmap lock");
            for (name, t) in load_tensors(&self.weights)? {
                data.insert(format!("encoder.{name}"), Var::from_tensor(&t)?);
            }
        }
        let vb = VarBuilder::from_varmap(varmap, DType::F32, &Device::Cpu);
        Ok(DistilBert::load(vb.pp("encoder"), &self.config)?)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }
}
