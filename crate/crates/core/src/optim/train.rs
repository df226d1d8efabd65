//! Mini-batch training with Adam.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::dataset::LabeledExample;
use crate::model::SerModel;
use crate::nn::softmax;
use crate::optim::adam::{adam_step, AdamConfig, AdamState};
use crate::optim::loss::{cross_entropy, softmax_cross_entropy_grad};
use crate::optim::metrics::categorical_accuracy;
use crate::rng::{self, Stream};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Layer {
        epoch: usize,
        batch: usize,
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub shuffle: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 125,
            batch_size: 16,
            seed: 0,
            lr: 1e-3,
            shuffle: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Eval-mode loss and accuracy on the validation set, when one is given.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    /// `epoch,train_loss,train_acc[,val_loss,val_acc]` lines under a header row.
    pub fn to_text(&self) -> String {
        let with_val = self.records.iter().any(|r| r.val_acc.is_some());
        let mut s = String::from(if with_val {
            "epoch,train_loss,train_acc,val_loss,val_acc\n"
        } else {
            "epoch,train_loss,train_acc\n"
        });
        for r in &self.records {
            let _ = write!(s, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.train_acc);
            if with_val {
                let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
                let _ = write!(s, ",{},{}", f(r.val_loss), f(r.val_acc));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Model-ready inputs and class targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Tensor<f32>,
    pub targets: Vec<usize>,
}

impl TrainingSet {
    pub fn from_examples(model: &SerModel, examples: &[LabeledExample]) -> Result<Self, TensorError> {
        let inputs = examples
            .iter()
            .map(|e| model.prepare_input(&e.features))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            inputs: model.batch_tensor(&inputs)?,
            targets: examples.iter().map(|e| e.label.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Eval-mode accuracy of `model` on `set`.
pub fn evaluate_accuracy(model: &SerModel, set: &TrainingSet, chunk: usize) -> Result<f64, TensorError> {
    evaluate_set(model, set, chunk).map(|(_, acc)| acc)
}

/// Eval-mode `(cross-entropy, accuracy)` of `model` on `set`.
pub fn evaluate_set(model: &SerModel, set: &TrainingSet, chunk: usize) -> Result<(f64, f64), TensorError> {
    let mut probs = Vec::with_capacity(set.len() * model.architecture.n_classes);
    let idx: Vec<usize> = (0..set.len()).collect();
    for group in idx.chunks(chunk.max(1)) {
        probs.extend_from_slice(model.infer(&set.inputs.select_batch(group))?.data());
    }
    let probs = Tensor::new(vec![set.len(), model.architecture.n_classes], probs)?;
    Ok((
        cross_entropy(&probs, &set.targets)?,
        categorical_accuracy(&probs, &set.targets),
    ))
}

/// Train `model` in place.
///
/// Every epoch shuffles the example order (shuffle stream of `config.seed`),
/// walks it in batches of `batch_size` (the last batch may be short), and
/// takes one Adam step per batch over every parameter in stack order.
/// Dropout masks come from the dropout stream of the same seed, so the
/// result depends only on `(model, set, config)`.
///
/// `validation`, when given, is scored in eval mode after each epoch.
pub fn train_on(
    model: &mut SerModel,
    set: &TrainingSet,
    config: &TrainingConfig,
    validation: Option<&TrainingSet>,
) -> Result<TrainingHistory, TrainError> {
    config.validate()?;
    if set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let shapes: Vec<Vec<usize>> = model
        .layers
        .iter()
        .flat_map(|l| l.parameters())
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &shape_refs,
    );
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            rng::shuffle(&mut shuffle_rng, &mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let layer_err = |source| TrainError::Layer {
                epoch,
                batch: b,
                source,
            };
            let x = set.inputs.select_batch(batch);
            let targets: Vec<usize> = batch.iter().map(|&i| set.targets[i]).collect();

            let logits = model.forward_logits(x, &mut dropout_rng).map_err(layer_err)?;
            let probs = softmax(&logits).map_err(layer_err)?;
            let loss = cross_entropy(&probs, &targets).map_err(layer_err)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
            correct += categorical_accuracy(&probs, &targets) * batch.len() as f64;

            let grad = softmax_cross_entropy_grad(&probs, &targets).map_err(layer_err)?;
            model.backward_logits(grad).map_err(layer_err)?;

            let (mut params, grads): (Vec<_>, Vec<_>) =
                model.layers.iter_mut().flat_map(|l| l.params_and_grads()).unzip();
            adam_step(&mut params, &grads, &mut adam).map_err(layer_err)?;
        }
        let val = validation
            .map(|v| evaluate_set(model, v, config.batch_size))
            .transpose()?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / set.len() as f64,
            train_acc: correct / set.len() as f64,
            val_loss: val.map(|v| v.0),
            val_acc: val.map(|v| v.1),
        };
        tracing::info!(
            epoch,
            loss = record.train_loss,
            acc = record.train_acc,
            val_acc = ?record.val_acc,
            "epoch complete"
        );
        history.records.push(record);
    }
    Ok(history)
}

/// Featurize `train_set` for `model` and train it. Returns the trained model
/// and its per-epoch history.
pub fn train(
    mut model: SerModel,
    train_set: &[LabeledExample],
    config: &TrainingConfig,
) -> Result<(SerModel, TrainingHistory), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let set = TrainingSet::from_examples(&model, train_set)?;
    let history = train_on(&mut model, &set, config, None)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let bad = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let d = TrainingConfig::default();
        assert_eq!((d.epochs, d.batch_size, d.lr), (125, 16, 1e-3));
    }

    #[test]
    fn history_text() {
        let h = TrainingHistory {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 2.5,
                    train_acc: 0.25,
                    val_loss: None,
                    val_acc: None,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 2.0,
                    train_acc: 0.5,
                    val_loss: Some(1.5),
                    val_acc: Some(0.75),
                },
            ],
        };
        assert_eq!(
            h.to_text(),
            "epoch,train_loss,train_acc,val_loss,val_acc\n1,2.500000,0.250000,,\n2,2.000000,0.500000,1.500000,0.750000\n"
        );
    }
}
