use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{Embedding, Module, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, masked_mean, max_pool_last, AttentionPool, Conv1d, Dense, Lstm, Params};
use super::{Architecture, FeatureRecord, ModelConfig, ModelError, Sequence};
use crate::encode::{ContextualEncoder, DistilBert, Matrix};

/// How token positions become vectors before the classifier body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FrontEnd {
    /// Inputs already are `seq_len x dim` vectors.
    Dense { dim: usize },
    /// Trainable embedding table over vocabulary ids.
    Learned { rows: usize, dim: usize },
    /// Fixed pretrained vectors over vocabulary ids.
    Frozen { rows: usize, dim: usize },
    /// Subword ids through a trainable copy of the contextual encoder.
    Transformer { dim: usize, vocab_size: usize, pad_id: u32 },
}

impl FrontEnd {
    pub fn output_dim(&self) -> usize {
        match self {
            FrontEnd::Dense { dim }
            | FrontEnd::Learned { dim, .. }
            | FrontEnd::Frozen { dim, .. }
            | FrontEnd::Transformer { dim, .. } => *dim,
        }
    }

    fn takes_ids(&self) -> bool {
        !matches!(self, FrontEnd::Dense { .. })
    }
}

/// Shape of the per-record input a model accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub seq_len: usize,
    pub front: FrontEnd,
}

/// External pieces some front ends need at construction time.
#[derive(Default, Clone, Copy)]
pub struct BuildContext<'a> {
    /// Pretrained rows for [`FrontEnd::Frozen`]; left `None` when weights are loaded afterwards.
    pub frozen_table: Option<&'a Matrix>,
    pub encoder: Option<&'a ContextualEncoder>,
}

enum Front {
    Dense,
    Table(Embedding),
    Transformer(Box<DistilBert>),
}

enum Body {
    Ann {
        attention: Option<AttentionPool>,
    },
    Lstm {
        fwd: Lstm,
        attention: Option<AttentionPool>,
    },
    BiLstm {
        fwd: Lstm,
        bwd: Lstm,
        attention: Option<AttentionPool>,
    },
    Cnn {
        conv: Conv1d,
        window: usize,
        attention: Option<AttentionPool>,
    },
}

/// A built classifier: front end, body, `dense(64) -> dropout -> dense(1)` head.
pub struct Classifier {
    pub(crate) config: ModelConfig,
    pub(crate) input: InputSpec,
    front: Front,
    body: Body,
    hidden: Dense,
    out: Dense,
    pub(crate) varmap: VarMap,
    pub(crate) trainable: Vec<Var>,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("config", &self.config)
            .field("input", &self.input)
            .field("trainable", &self.trainable.len())
            .finish_non_exhaustive()
    }
}

pub(crate) struct Batch {
    pub input: Tensor,
    pub mask: Tensor,
    pub stance: Tensor,
    pub labels: Tensor,
}

/// Assembles the layers for `config` over inputs shaped by `input`.
/// Weights are drawn from a generator seeded by `config.seed`.
pub fn build_model(config: &ModelConfig, input: &InputSpec, ctx: BuildContext) -> Result<Classifier, ModelError> {
    config.validate(input.seq_len)?;
    let varmap = VarMap::new();
    let mut trainable = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dev = Device::Cpu;

    let front = match &input.front {
        FrontEnd::Dense { .. } => Front::Dense,
        FrontEnd::Learned { rows, dim } => {
            let mut p = Params {
                varmap: &varmap,
                trainable: &mut trainable,
                rng: &mut rng,
            };
            let t = p.uniform("embedding.learned", &[*rows, *dim], 0.05)?;
            Front::Table(Embedding::new(t, *dim))
        }
        FrontEnd::Frozen { rows, dim } => {
            let table = match ctx.frozen_table {
                Some(m) => {
                    if m.rows != *rows || m.cols != *dim {
                        return Err(ModelError::Config(format!(
                            "frozen table is {}x{}, spec expects {rows}x{dim}",
                            m.rows, m.cols
                        )));
                    }
                    Tensor::from_slice(&m.data, (m.rows, m.cols), &dev)?
                }
                None => Tensor::zeros((*rows, *dim), DType::F32, &dev)?,
            };
            let mut p = Params {
                varmap: &varmap,
                trainable: &mut trainable,
                rng: &mut rng,
            };
            let t = p.constant("embedding.frozen", table, false)?;
            Front::Table(Embedding::new(t, *dim))
        }
        FrontEnd::Transformer { dim, .. } => {
            let encoder = ctx
                .encoder
                .ok_or_else(|| ModelError::Config("fine-tuning requires a loaded contextual encoder".into()))?;
            if encoder.dim() != *dim {
                return Err(ModelError::Config(format!(
                    "encoder width {} does not match spec {dim}",
                    encoder.dim()
                )));
            }
            let model = encoder.trainable_copy(&varmap)?;
            let data = varmap.data().lock().expect("varmap lock");
            let mut names: Vec<&String> = data.keys().filter(|n| n.starts_with("encoder.")).collect();
            names.sort();
            trainable.extend(names.into_iter().map(|n| data[n].clone()));
            drop(data);
            Front::Transformer(Box::new(model))
        }
    };

    let mut p = Params {
        varmap: &varmap,
        trainable: &mut trainable,
        rng: &mut rng,
    };
    let dim = input.front.output_dim();
    let units = config.recurrent_units;
    let attention = |p: &mut Params, width: usize| -> Result<Option<AttentionPool>, ModelError> {
        Ok(if config.use_attention {
            Some(AttentionPool::new(p, "attention", width, width)?)
        } else {
            None
        })
    };
    let (body, features) = match config.architecture {
        Architecture::Ann => (
            Body::Ann {
                attention: attention(&mut p, dim)?,
            },
            dim,
        ),
        Architecture::Lstm => {
            let fwd = Lstm::new(&mut p, "lstm", dim, units)?;
            (
                Body::Lstm {
                    fwd,
                    attention: attention(&mut p, units)?,
                },
                units,
            )
        }
        Architecture::Bilstm => {
            let fwd = Lstm::new(&mut p, "lstm_fwd", dim, units)?;
            let bwd = Lstm::new(&mut p, "lstm_bwd", dim, units)?;
            (
                Body::BiLstm {
                    fwd,
                    bwd,
                    attention: attention(&mut p, 2 * units)?,
                },
                2 * units,
            )
        }
        Architecture::Cnn => {
            let conv = Conv1d::new(&mut p, "conv", dim, config.conv_filters, config.conv_kernel)?;
            let att = attention(&mut p, config.conv_filters)?;
            let features = if att.is_some() {
                config.conv_filters
            } else {
                config.conv_filters * ((input.seq_len - config.conv_kernel + 1) / config.pool_window)
            };
            (
                Body::Cnn {
                    conv,
                    window: config.pool_window,
                    attention: att,
                },
                features,
            )
        }
    };
    let head_in = features + usize::from(config.use_stance);
    let hidden = Dense::new(&mut p, "hidden", head_in, config.dense_units)?;
    let out = Dense::new(&mut p, "output", config.dense_units, 1)?;
    Ok(Classifier {
        config: config.clone(),
        input: input.clone(),
        front,
        body,
        hidden,
        out,
        varmap,
        trainable,
    })
}

impl Classifier {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable.iter().map(|v| v.elem_count()).sum()
    }

    /// Flattened copies of every variable, sorted by name.
    pub fn weights_snapshot(&self) -> Result<Vec<(String, Vec<f32>)>, ModelError> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        names
            .into_iter()
            .map(|n| Ok((n.clone(), data[n].as_tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    pub(crate) fn check(&self, r: &FeatureRecord) -> Result<(), ModelError> {
        let want = self.input.seq_len;
        if r.sequence.len() != want {
            return Err(ModelError::SpecMismatch(format!(
                "sequence length {} (expected {want})",
                r.sequence.len()
            )));
        }
        match (&r.sequence, &self.input.front) {
            (Sequence::Ids(_), f) if f.takes_ids() => Ok(()),
            (Sequence::Ids(_), _) => Err(ModelError::SpecMismatch("token ids given to a dense model".into())),
            (s, FrontEnd::Dense { dim }) if s.dim() == Some(*dim) => Ok(()),
            (s, FrontEnd::Dense { dim }) => Err(ModelError::SpecMismatch(format!(
                "vector width {:?} (expected {dim})",
                s.dim()
            ))),
            _ => Err(ModelError::SpecMismatch("dense vectors given to an id model".into())),
        }
    }

    pub(crate) fn batch(&self, records: &[&FeatureRecord]) -> Result<Batch, ModelError> {
        let dev = Device::Cpu;
        let b = records.len();
        let l = self.input.seq_len;
        for r in records {
            self.check(r)?;
        }
        let (input, mask) = match &self.input.front {
            FrontEnd::Dense { dim } => {
                let mut data = vec![0f32; b * l * dim];
                let mut mask = vec![0f32; b * l];
                for (i, r) in records.iter().enumerate() {
                    let block = &mut data[i * l * dim..(i + 1) * l * dim];
                    r.sequence.write_dense(block);
                    for (t, row) in block.chunks(*dim).enumerate() {
                        if row.iter().any(|&x| x != 0.0) {
                            mask[i * l + t] = 1.0;
                        }
                    }
                }
                (
                    Tensor::from_vec(data, (b, l, *dim), &dev)?,
                    Tensor::from_vec(mask, (b, l), &dev)?,
                )
            }
            front => {
                let pad = match front {
                    FrontEnd::Transformer { pad_id, .. } => *pad_id,
                    _ => crate::encode::PAD,
                };
                let mut ids = Vec::with_capacity(b * l);
                for r in records {
                    if let Sequence::Ids(v) = &r.sequence {
                        ids.extend_from_slice(v);
                    }
                }
                let mask: Vec<f32> = ids.iter().map(|&i| if i == pad { 0.0 } else { 1.0 }).collect();
                (
                    Tensor::from_vec(ids, (b, l), &dev)?,
                    Tensor::from_vec(mask, (b, l), &dev)?,
                )
            }
        };
        let stance: Vec<f32> = records.iter().map(|r| r.stance.value as f32).collect();
        let labels: Vec<f32> = records.iter().map(|r| f32::from(r.label)).collect();
        Ok(Batch {
            input,
            mask,
            stance: Tensor::from_vec(stance, (b, 1), &dev)?,
            labels: Tensor::from_vec(labels, (b, 1), &dev)?,
        })
    }

    /// Logits `[b, 1]`. Dropout is active only when `dropout_rng` is given.
    pub(crate) fn forward(&self, batch: &Batch, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Tensor, ModelError> {
        let mask = &batch.mask;
        let xs = match &self.front {
            Front::Dense => batch.input.clone(),
            Front::Table(e) => e.forward(&batch.input)?,
            Front::Transformer(model) => model
                .forward(&batch.input, Some(mask))?
                .broadcast_mul(&mask.unsqueeze(2)?)?,
        };
        let features = match &self.body {
            Body::Ann { attention } => match attention {
                Some(a) => a.pool(&xs, mask)?.0,
                None => masked_mean(&xs, mask)?,
            },
            Body::Lstm { fwd, attention } => {
                let (states, last) = fwd.forward(&xs, mask, false)?;
                match attention {
                    Some(a) => a.pool(&states, mask)?.0,
                    None => last,
                }
            }
            Body::BiLstm { fwd, bwd, attention } => {
                let (sf, lf) = fwd.forward(&xs, mask, false)?;
                let (sb, lb) = bwd.forward(&xs, mask, true)?;
                match attention {
                    Some(a) => a.pool(&Tensor::cat(&[&sf, &sb], D::Minus1)?, mask)?.0,
                    None => Tensor::cat(&[&lf, &lb], D::Minus1)?,
                }
            }
            Body::Cnn {
                conv,
                window,
                attention,
            } => {
                let maps = conv.forward(&xs)?;
                match attention {
                    Some(a) => {
                        let states = maps.transpose(1, 2)?.contiguous()?;
                        let (b, l, _) = states.dims3()?;
                        let ones = Tensor::ones((b, l), DType::F32, states.device())?;
                        a.pool(&states, &ones)?.0
                    }
                    None => max_pool_last(&maps, *window)?.flatten_from(1)?,
                }
            }
        };
        let features = if self.config.use_stance {
            Tensor::cat(&[&features, &batch.stance], 1)?
        } else {
            features
        };
        let mut h = self.hidden.forward(&features)?.relu()?;
        if let Some(rng) = dropout_rng {
            h = dropout(&h, self.config.dropout, rng)?;
        }
        Ok(self.out.forward(&h)?)
    }
}
