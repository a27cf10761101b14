//! Mini-batch fine-tuning with per-epoch validation, best-epoch selection,
//! and deterministic batch inference.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{ClassifierModel, ModelError};
use crate::dataset::{ClassRegistry, DatasetError, DatasetSplit, ImageSource, LabeledImage};
use crate::image::{batch_tensor, Image};
use crate::nn::{argmax, softmax_cross_entropy, Adam, GradRequest, Mode};
use crate::preprocess::{prepare_eval, prepare_train, PreprocessConfig, PreprocessError};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("model has {model} outputs but the dataset has {dataset} classes")]
    ClassCount { model: usize, dataset: usize },
    #[error("class registry mismatch: model was trained on [{expected}], dataset has [{found}]")]
    RegistryMismatch { expected: String, found: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 10,
            optimizer: Optimizer::Adam,
            batch_size: 32,
            seed: 0,
            loss: Loss::CrossEntropy,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted as a frozen-weights dry run.
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One completed epoch. Equality ignores `wall_time_s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.train_loss == o.train_loss
            && self.train_accuracy == o.train_accuracy
            && self.val_loss == o.val_loss
            && self.val_accuracy == o.val_accuracy
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    /// Earliest epoch with the highest validation accuracy.
    fn select_best(records: &[EpochRecord]) -> usize {
        let mut best = 0;
        for (i, r) in records.iter().enumerate() {
            if r.val_accuracy > records[best].val_accuracy {
                best = i;
            }
        }
        best
    }

    pub fn from_records(records: Vec<EpochRecord>) -> Self {
        let best_epoch = Self::select_best(&records);
        Self { records, best_epoch }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.get(self.best_epoch)
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<EpochRecord>, _>>()?;
        Ok(Self::from_records(records))
    }
}

fn check_registry<T: Scalar>(expected: &ClassRegistry, source: &dyn ImageSource<T>) -> Result<(), TrainError> {
    if expected != source.registry() {
        return Err(TrainError::RegistryMismatch {
            expected: expected.names().join(", "),
            found: source.registry().names().join(", "),
        });
    }
    Ok(())
}

type Prepared<T> = Result<LabeledImage<T>, TrainError>;

fn load_batch<T: Scalar>(
    ids: &[String],
    prep: impl Fn(&str) -> Prepared<T> + Sync,
) -> Result<Vec<LabeledImage<T>>, TrainError> {
    ids.par_iter().map(|id| prep(id)).collect()
}

/// Mean loss and accuracy of the logits of `batch` against its labels.
fn score<T: Scalar>(logits: &crate::tensor::Tensor<T>, labels: &[usize]) -> (f64, usize) {
    let (loss, _, _) = softmax_cross_entropy(logits, labels);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(b, &l)| argmax(logits.item(*b)) == l)
        .count();
    (loss.lossy_f64() * labels.len() as f64, correct)
}

/// Fine-tunes every weight of `model` on `split.train` and leaves it holding
/// the weights of the best validation epoch.
pub fn train<T: Scalar>(
    model: &mut ClassifierModel<T>,
    source: &dyn ImageSource<T>,
    split: &DatasetSplit,
    pp: &PreprocessConfig,
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    train_with_observer(model, source, split, pp, cfg, &mut |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer<T: Scalar>(
    model: &mut ClassifierModel<T>,
    source: &dyn ImageSource<T>,
    split: &DatasetSplit,
    pp: &PreprocessConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    pp.validate()?;
    check_registry(&split.classes, source)?;
    if model.n_classes() != split.classes.len() {
        return Err(TrainError::ClassCount {
            model: model.n_classes(),
            dataset: split.classes.len(),
        });
    }
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let side = model.input_side();
    let mut opt = Adam::<T>::new(cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best_state: Option<Vec<Vec<T>>> = None;
    let mut best_acc = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order = split.train.clone();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &["epoch", &epoch.to_string()]));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, ids) in order.chunks(cfg.batch_size).enumerate() {
            let items = load_batch(ids, |id| Ok(prepare_train(&source.load(id)?, pp, side, epoch)?))?;
            let labels: Vec<usize> = items.iter().map(|i| i.label).collect();
            let pixels: Vec<&Image<T>> = items.iter().map(|i| &i.pixels).collect();
            let x = batch_tensor(&pixels);

            let net = model.network_mut();
            let trace = net.forward(&x, Mode::Train);
            let (loss, grad, _) = softmax_cross_entropy(trace.output(), &labels);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            let (sum, ok) = score(trace.output(), &labels);
            loss_sum += sum;
            correct += ok;
            let grads = net.backward(
                &trace,
                grad,
                &GradRequest {
                    params: true,
                    ..Default::default()
                },
            );
            net.commit_batch_stats(&trace);
            opt.step(net.params_mut(), &grads.params);
        }

        let (val_loss, val_acc) = evaluate_loss(model, source, &split.val, pp, cfg.batch_size)?;
        let n = order.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy: val_acc,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4} ({:.1}s)",
            record.train_loss, record.train_accuracy, record.val_loss, record.val_accuracy, record.wall_time_s
        );
        if val_acc > best_acc {
            best_acc = val_acc;
            best_state = Some(model.network().state().iter().map(|p| p.value.clone()).collect());
        }
        observer(&record);
        records.push(record);
    }

    let best = best_state.expect("at least one epoch ran");
    for (p, v) in model.network_mut().state_mut().into_iter().zip(best) {
        p.value = v;
    }
    Ok(TrainLog::from_records(records))
}

fn evaluate_loss<T: Scalar>(
    model: &ClassifierModel<T>,
    source: &dyn ImageSource<T>,
    ids: &[String],
    pp: &PreprocessConfig,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in ids.chunks(batch_size) {
        let items = load_batch(chunk, |id| Ok(prepare_eval(&source.load(id)?, pp, model.input_side())?))?;
        let labels: Vec<usize> = items.iter().map(|i| i.label).collect();
        let pixels: Vec<&Image<T>> = items.iter().map(|i| &i.pixels).collect();
        let (sum, ok) = score(&model.logits(&batch_tensor(&pixels)), &labels);
        loss_sum += sum;
        correct += ok;
    }
    let n = ids.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Predictions for a list of items, in the given order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.ids.is_empty() {
            return 0.0;
        }
        let ok = self
            .labels
            .iter()
            .zip(&self.predictions)
            .filter(|(a, b)| a == b)
            .count();
        ok as f64 / self.ids.len() as f64
    }
}

/// Eval-mode inference without augmentation. `classes` is the registry the
/// model was trained with and must equal the source's.
pub fn evaluate<T: Scalar>(
    model: &ClassifierModel<T>,
    classes: &ClassRegistry,
    source: &dyn ImageSource<T>,
    ids: &[String],
    pp: &PreprocessConfig,
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    check_registry(classes, source)?;
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be at least 1".into()));
    }
    let mut out = Evaluation {
        ids: ids.to_vec(),
        labels: Vec::with_capacity(ids.len()),
        predictions: Vec::with_capacity(ids.len()),
        logits: Vec::with_capacity(ids.len()),
    };
    for chunk in ids.chunks(batch_size) {
        let items = load_batch(chunk, |id| Ok(prepare_eval(&source.load(id)?, pp, model.input_side())?))?;
        let pixels: Vec<&Image<T>> = items.iter().map(|i| &i.pixels).collect();
        let logits = model.logits(&batch_tensor(&pixels));
        for (b, item) in items.iter().enumerate() {
            let z = logits.item(b);
            out.labels.push(item.label);
            out.predictions.push(argmax(z));
            out.logits.push(z.iter().map(|v| v.lossy_f64()).collect());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val_accuracy: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0,
            train_accuracy: 0.5,
            val_loss: 1.0,
            val_accuracy,
            wall_time_s: epoch as f64,
        }
    }

    #[test]
    fn best_epoch_is_earliest_maximum() {
        let log = TrainLog::from_records(vec![rec(0, 0.5), rec(1, 0.9), rec(2, 0.9), rec(3, 0.7)]);
        assert_eq!(log.best_epoch, 1);
        let back = TrainLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log.to_jsonl().lines().count(), 4);
    }

    #[test]
    fn wall_time_is_ignored_by_equality() {
        let mut a = rec(0, 0.5);
        let b = rec(0, 0.5);
        a.wall_time_s = 99.0;
        assert_eq!(a, b);
        a.val_loss = 0.3;
        assert_ne!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(zero_lr.validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: TrainConfig =
            serde_json::from_str(r#"{"optimizer":"adam","loss":"cross_entropy","epochs":3}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.learning_rate, 1e-4);
    }
}
