use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifact::predict_proba;
use super::network::Classifier;
use super::{binary_cross_entropy, FeatureRecord, ModelError, TrainHyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss with dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of training examples classified correctly during the epoch's minibatches.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_accuracy, e.val_accuracy
            ));
        }
        s
    }
}

/// `mean(max(z, 0) - z y + ln(1 + exp(-|z|)))`, the cross-entropy of `sigmoid(z)`.
fn bce_with_logits(logits: &Tensor, labels: &Tensor) -> candle_core::Result<Tensor> {
    let relu = logits.relu()?;
    let soft = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    (relu - logits.mul(labels)?)?.add(&soft)?.mean_all()
}

fn snapshot(vars: &[Var]) -> candle_core::Result<Vec<Tensor>> {
    vars.iter().map(|v| v.as_tensor().copy()).collect()
}

fn restore(vars: &[Var], saved: &[Tensor]) -> candle_core::Result<()> {
    for (v, t) in vars.iter().zip(saved) {
        v.set(t)?;
    }
    Ok(())
}

/// Adam on binary cross-entropy with shuffled minibatches. Stops after
/// `early_stop_patience` epochs without a lower validation loss and leaves
/// the best-validation weights in `model`.
pub fn train(
    model: &mut Classifier,
    train_set: &[FeatureRecord],
    val_set: &[FeatureRecord],
    hp: &TrainHyperparams,
) -> Result<TrainingHistory, ModelError> {
    hp.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptySet);
    }
    for r in train_set.iter().chain(val_set) {
        model.check(r)?;
    }
    let mut opt = AdamW::new(
        model.trainable.clone(),
        ParamsAdamW {
            lr: hp.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 0.0,
        },
    )?;
    let seed = model.config.seed;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let val_labels: Vec<u8> = val_set.iter().map(|r| r.label).collect();

    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut stale = 0;
    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(hp.batch_size) {
            let records: Vec<&FeatureRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = model.batch(&records)?;
            let logits = model.forward(&batch, Some(&mut dropout_rng))?;
            let loss = bce_with_logits(&logits, &batch.labels)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(ModelError::Diverged { epoch, loss: value });
            }
            opt.backward_step(&loss)?;
            loss_sum += value * records.len() as f64;
            let z = logits.flatten_all()?.to_vec1::<f32>()?;
            correct += z
                .iter()
                .zip(&records)
                .filter(|(z, r)| u8::from(**z >= 0.0) == r.label)
                .count();
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let probs = predict_proba(model, val_set)?;
        let val_loss = probs
            .iter()
            .zip(&val_labels)
            .map(|(&p, &y)| binary_cross_entropy(y, p))
            .sum::<f64>()
            / val_set.len() as f64;
        if !val_loss.is_finite() {
            return Err(ModelError::Diverged { epoch, loss: val_loss });
        }
        let val_correct = probs
            .iter()
            .zip(&val_labels)
            .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
            .count();
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy: val_correct as f64 / val_set.len() as f64,
        });
        log::info!("epoch {epoch}: train_loss {train_loss:.4} val_loss {val_loss:.4}");

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, snapshot(&model.trainable)?));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.early_stop_patience {
                history.stopped_early = epoch < hp.max_epochs;
                break;
            }
        }
    }
    if let Some((_, saved)) = best {
        restore(&model.trainable, &saved)?;
    }
    Ok(history)
}
