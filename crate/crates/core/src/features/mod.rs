//! Turns prepared articles into model inputs with one of three backends,
//! computing the stance scalar with the same backend.

mod cache;

pub use cache::{corpus_hash, round_to_f16, DenseCache};

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CleanText, PreparedArticle};
use crate::encode::{
    build_vocab, embed_static, pool, tokenize_pair, ContextualEncoder, EncodeError, EncoderInfo, Matrix, PooledVector,
    StaticEmbeddingTable, VocabEmbedding, Vocabulary, OOV,
};
use crate::models::{BuildContext, FeatureRecord, FrontEnd, InputSpec, ModelConfig, Sequence};
use crate::stance::{compute_stance, StanceScore, TextPooler};
use crate::ARTIFACT_FORMAT_VERSION;

const FEATURIZER_FILE: &str = "featurizer.json";
const VECTORS_FILE: &str = "vocab_vectors.safetensors";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("featurizer configuration: {0}")]
    Config(String),
    #[error("encoder version mismatch: {0}")]
    Version(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tokenizer,
    Static,
    Contextual,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Tokenizer, Backend::Static, Backend::Contextual];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Tokenizer => "tokenizer",
            Backend::Static => "static",
            Backend::Contextual => "contextual",
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tokenizer" => Ok(Backend::Tokenizer),
            "static" | "glove" => Ok(Backend::Static),
            "contextual" | "bert" => Ok(Backend::Contextual),
            other => Err(FeatureError::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// The `[encoder]` section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub backend: Backend,
    pub max_len: usize,
    /// Word backends: cap on learned vocabulary size, reserved indices excluded.
    pub vocab_size: Option<usize>,
    pub vectors_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Train the transformer jointly with the classifier.
    pub fine_tune: bool,
    /// Contextual embedding cache; `STANCECRED_CACHE_DIR` takes precedence.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            backend: Backend::Contextual,
            max_len: 512,
            vocab_size: None,
            vectors_path: None,
            checkpoint_dir: None,
            fine_tune: false,
            cache_dir: None,
        }
    }
}

impl EncoderSettings {
    pub fn resolved_cache_dir(&self, fallback: &Path) -> PathBuf {
        std::env::var_os("STANCECRED_CACHE_DIR")
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| fallback.to_path_buf())
    }
}

/// Lazily loaded pretrained assets, shared across the runs of one invocation.
#[derive(Debug, Default)]
pub struct Resources {
    vectors: OnceLock<Arc<StaticEmbeddingTable>>,
    encoder: OnceLock<Arc<ContextualEncoder>>,
}

impl Resources {
    pub fn with_encoder(encoder: Arc<ContextualEncoder>) -> Self {
        let r = Self::default();
        let _ = r.encoder.set(encoder);
        r
    }

    pub fn vectors(&self, settings: &EncoderSettings) -> Result<Arc<StaticEmbeddingTable>, FeatureError> {
        if let Some(v) = self.vectors.get() {
            return Ok(v.clone());
        }
        let path = settings
            .vectors_path
            .as_ref()
            .ok_or_else(|| FeatureError::Config("static backend needs encoder.vectors_path".into()))?;
        let table = Arc::new(StaticEmbeddingTable::load(path)?);
        Ok(self.vectors.get_or_init(|| table).clone())
    }

    pub fn encoder(&self, settings: &EncoderSettings) -> Result<Arc<ContextualEncoder>, FeatureError> {
        if let Some(e) = self.encoder.get() {
            return Ok(e.clone());
        }
        let dir = settings
            .checkpoint_dir
            .as_ref()
            .ok_or_else(|| FeatureError::Config("contextual backend needs encoder.checkpoint_dir".into()))?;
        let enc = Arc::new(ContextualEncoder::load(dir)?);
        Ok(self.encoder.get_or_init(|| enc).clone())
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Tokenizer {
        vocab: Vocabulary,
    },
    Static {
        vocab: Vocabulary,
        table: VocabEmbedding,
    },
    Contextual {
        encoder: Arc<ContextualEncoder>,
        fine_tune: bool,
    },
}

/// A backend fitted to a training split.
#[derive(Debug, Clone)]
pub struct Featurizer {
    max_len: usize,
    kind: Kind,
}

#[derive(Serialize, Deserialize)]
struct FeaturizerFile {
    format_version: u32,
    backend: Backend,
    max_len: usize,
    fine_tune: bool,
    vocab: Option<Vocabulary>,
    encoder: Option<EncoderInfo>,
}

/// Mean of one-hot vocabulary rows; OOV words contribute zero.
struct OneHot<'a>(&'a Vocabulary);

impl TextPooler for OneHot<'_> {
    fn pooled(&self, text: &CleanText) -> Result<PooledVector, EncodeError> {
        let mut values = vec![0.0; self.0.embedding_rows()];
        let mut n = 0usize;
        for w in text.words() {
            let id = self.0.get(w);
            if id != OOV {
                values[id as usize] += 1.0;
            }
            n += 1;
        }
        if n == 0 {
            return Err(EncodeError::AllMasked);
        }
        values.iter_mut().for_each(|v| *v /= n as f64);
        Ok(PooledVector {
            values,
            source_token_count: n,
        })
    }
}

struct WordVectors<'a>(&'a Vocabulary, &'a VocabEmbedding);

impl TextPooler for WordVectors<'_> {
    fn pooled(&self, text: &CleanText) -> Result<PooledVector, EncodeError> {
        let ids: Vec<u32> = text.words().map(|w| self.0.get(w)).collect();
        let m = embed_static(&ids, self.1);
        pool(&m, &vec![1; ids.len()])
    }
}

struct Transformer<'a>(&'a ContextualEncoder, usize);

impl TextPooler for Transformer<'_> {
    fn pooled(&self, text: &CleanText) -> Result<PooledVector, EncodeError> {
        let ids = self.0.token_ids(text, self.1)?;
        let m = self.0.hidden_states(&ids)?;
        pool(&m, &vec![1; m.rows])
    }
}

impl Featurizer {
    /// Fits vocabulary-based backends on `train`; loads pretrained assets through `resources`.
    pub fn fit(
        settings: &EncoderSettings,
        train: &[PreparedArticle],
        resources: &Resources,
    ) -> Result<Self, FeatureError> {
        if settings.max_len < 2 {
            return Err(FeatureError::Config("max_len must be at least 2".into()));
        }
        let vocab = || build_vocab(train.iter().flat_map(|a| [&a.title, &a.body]), settings.vocab_size);
        let kind = match settings.backend {
            Backend::Tokenizer => Kind::Tokenizer { vocab: vocab()? },
            Backend::Static => {
                let vocab = vocab()?;
                let table = resources.vectors(settings)?.restrict(&vocab);
                Kind::Static { vocab, table }
            }
            Backend::Contextual => {
                let encoder = resources.encoder(settings)?;
                if settings.max_len > encoder.info().max_positions {
                    return Err(EncodeError::Config(format!(
                        "max_len {} exceeds the checkpoint limit of {}",
                        settings.max_len,
                        encoder.info().max_positions
                    ))
                    .into());
                }
                Kind::Contextual {
                    encoder,
                    fine_tune: settings.fine_tune,
                }
            }
        };
        Ok(Self {
            max_len: settings.max_len,
            kind,
        })
    }

    pub fn backend(&self) -> Backend {
        match self.kind {
            Kind::Tokenizer { .. } => Backend::Tokenizer,
            Kind::Static { .. } => Backend::Static,
            Kind::Contextual { .. } => Backend::Contextual,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn encoder(&self) -> Option<&Arc<ContextualEncoder>> {
        match &self.kind {
            Kind::Contextual { encoder, .. } => Some(encoder),
            _ => None,
        }
    }

    pub fn encoder_fingerprint(&self) -> Option<String> {
        self.encoder().map(|e| e.fingerprint().to_string())
    }

    pub fn input_spec(&self, model: &ModelConfig) -> InputSpec {
        let front = match &self.kind {
            Kind::Tokenizer { vocab } => FrontEnd::Learned {
                rows: vocab.embedding_rows(),
                dim: model.embedding_dim,
            },
            Kind::Static { vocab, table } => FrontEnd::Frozen {
                rows: vocab.embedding_rows(),
                dim: table.dim(),
            },
            Kind::Contextual {
                encoder,
                fine_tune: true,
            } => FrontEnd::Transformer {
                dim: encoder.dim(),
                vocab_size: encoder.info().vocab_size,
                pad_id: encoder.info().pad_id,
            },
            Kind::Contextual { encoder, .. } => FrontEnd::Dense { dim: encoder.dim() },
        };
        InputSpec {
            seq_len: self.max_len,
            front,
        }
    }

    pub fn build_context(&self) -> BuildContext<'_> {
        match &self.kind {
            Kind::Static { table, .. } => BuildContext {
                frozen_table: Some(&table.matrix),
                encoder: None,
            },
            Kind::Contextual { encoder, .. } => BuildContext {
                frozen_table: None,
                encoder: Some(encoder),
            },
            Kind::Tokenizer { .. } => BuildContext::default(),
        }
    }

    pub fn stance(&self, title: &CleanText, body: &CleanText) -> Result<StanceScore, FeatureError> {
        Ok(match &self.kind {
            Kind::Tokenizer { vocab } => compute_stance(title, body, &OneHot(vocab)),
            Kind::Static { vocab, table } => compute_stance(title, body, &WordVectors(vocab, table)),
            Kind::Contextual { encoder, .. } => compute_stance(title, body, &Transformer(encoder, self.max_len)),
        }?)
    }

    /// Pair vectors rounded through `f16`, and stance, for one article.
    fn contextual_pair(
        &self,
        encoder: &ContextualEncoder,
        a: &PreparedArticle,
    ) -> Result<(Matrix, StanceScore), FeatureError> {
        let mut m = encoder.encode_pair(&a.title, &a.body, self.max_len)?.vectors;
        round_to_f16(&mut m);
        Ok((m, self.stance(&a.title, &a.body)?))
    }

    fn sequence(&self, title: &CleanText, body: &CleanText) -> Result<Option<Sequence>, FeatureError> {
        Ok(match &self.kind {
            Kind::Tokenizer { vocab } | Kind::Static { vocab, .. } => {
                Some(Sequence::Ids(tokenize_pair(title, body, vocab, self.max_len)))
            }
            Kind::Contextual {
                encoder,
                fine_tune: true,
            } => {
                let mut ids = encoder.pair_token_ids(title, body, self.max_len)?;
                ids.resize(self.max_len, encoder.info().pad_id);
                Some(Sequence::Ids(ids))
            }
            Kind::Contextual { .. } => None,
        })
    }

    /// Features for one article, computed from scratch.
    pub fn featurize(&self, a: &PreparedArticle) -> Result<FeatureRecord, FeatureError> {
        let label = a.label.target();
        if let Some(sequence) = self.sequence(&a.title, &a.body)? {
            return Ok(FeatureRecord {
                sequence,
                stance: self.stance(&a.title, &a.body)?,
                label,
            });
        }
        let encoder = self.encoder().expect("contextual kind");
        let (m, stance) = self.contextual_pair(encoder, a)?;
        Ok(FeatureRecord {
            sequence: Sequence::Dense(m),
            stance,
            label,
        })
    }

    /// Features for a corpus, in order. The contextual backend encodes through
    /// the on-disk cache under `cache_root`, so a corpus is encoded once per key.
    pub fn featurize_all(
        &self,
        articles: &[PreparedArticle],
        cache_root: &Path,
    ) -> Result<Vec<FeatureRecord>, FeatureError> {
        use rayon::prelude::*;
        let Some(encoder) = self.encoder() else {
            return articles.par_iter().map(|a| self.featurize(a)).collect();
        };
        let cache = Arc::new(DenseCache::open_or_build(
            cache_root,
            encoder,
            self.max_len,
            articles,
            |a| self.contextual_pair(encoder, a),
        )?);
        articles
            .iter()
            .enumerate()
            .map(|(row, a)| {
                let sequence = match self.sequence(&a.title, &a.body)? {
                    Some(s) => s,
                    None => Sequence::Stored {
                        store: cache.clone(),
                        row,
                    },
                };
                Ok(FeatureRecord {
                    sequence,
                    stance: cache.stance(row),
                    label: a.label.target(),
                })
            })
            .collect()
    }

    /// Writes `featurizer.json` (and the vocabulary-aligned vectors of the static backend).
    pub fn save(&self, dir: &Path) -> Result<(), FeatureError> {
        std::fs::create_dir_all(dir)?;
        let (vocab, encoder, fine_tune) = match &self.kind {
            Kind::Tokenizer { vocab } => (Some(vocab.clone()), None, false),
            Kind::Static { vocab, table } => {
                let t = candle_core::Tensor::from_slice(
                    &table.matrix.data,
                    (table.matrix.rows, table.matrix.cols),
                    &candle_core::Device::Cpu,
                )?;
                t.save_safetensors("vectors", dir.join(VECTORS_FILE))?;
                (Some(vocab.clone()), None, false)
            }
            Kind::Contextual { encoder, fine_tune } => (None, Some(encoder.info().clone()), *fine_tune),
        };
        let file = FeaturizerFile {
            format_version: ARTIFACT_FORMAT_VERSION,
            backend: self.backend(),
            max_len: self.max_len,
            fine_tune,
            vocab,
            encoder,
        };
        std::fs::write(dir.join(FEATURIZER_FILE), serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Reverses [`save`](Self::save). A contextual featurizer reloads its
    /// checkpoint from `encoder_dir`, or the recorded directory when `None`,
    /// and refuses a checkpoint whose fingerprint differs.
    pub fn load(dir: &Path, encoder_dir: Option<&Path>) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(dir.join(FEATURIZER_FILE))?;
        let file: FeaturizerFile = serde_json::from_str(&text)?;
        if file.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(FeatureError::Version(format!(
                "featurizer format {} (this build reads {ARTIFACT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let missing = |what: &str| FeatureError::Config(format!("{FEATURIZER_FILE} lacks {what}"));
        let kind = match file.backend {
            Backend::Tokenizer => Kind::Tokenizer {
                vocab: file.vocab.ok_or_else(|| missing("vocab"))?,
            },
            Backend::Static => {
                let vocab = file.vocab.ok_or_else(|| missing("vocab"))?;
                let loaded = candle_core::safetensors::load(dir.join(VECTORS_FILE), &candle_core::Device::Cpu)?;
                let t = loaded.get("vectors").ok_or_else(|| missing("vectors"))?;
                let (rows, cols) = t.dims2()?;
                if rows != vocab.embedding_rows() {
                    return Err(FeatureError::Config("vector rows do not match the vocabulary".into()));
                }
                let data = t.flatten_all()?.to_vec1::<f32>()?;
                Kind::Static {
                    vocab,
                    table: VocabEmbedding {
                        matrix: Matrix { rows, cols, data },
                    },
                }
            }
            Backend::Contextual => {
                let info = file.encoder.ok_or_else(|| missing("encoder"))?;
                let path = encoder_dir.unwrap_or(&info.checkpoint_dir);
                let encoder = ContextualEncoder::load(path)?;
                if encoder.fingerprint() != info.fingerprint {
                    return Err(FeatureError::Version(format!(
                        "checkpoint {} has fingerprint {}, model was trained with {}",
                        path.display(),
                        encoder.fingerprint(),
                        info.fingerprint
                    )));
                }
                Kind::Contextual {
                    encoder: Arc::new(encoder),
                    fine_tune: file.fine_tune,
                }
            }
        };
        Ok(Self {
            max_len: file.max_len,
            kind,
        })
    }
}
