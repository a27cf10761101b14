//! Backbone pretraining on the generic shape corpus, standing in for
//! large-corpus pretrained weights when none are available offline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbones::{build, save_checkpoint, BackboneSpec, CheckpointMeta, ClassifierModel};
use crate::dataset::{generate_corpus, stratified_split, ImageSource};
use crate::preprocess::{AugmentConfig, PreprocessConfig};
use crate::scalar::Scalar;
use crate::training::{train_with_observer, EpochRecord, TrainConfig, TrainError, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub per_class: usize,
    pub noise_sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Extra epochs at a tenth of the learning rate, which settles the
    /// batch-norm running statistics.
    pub anneal_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            per_class: 100,
            noise_sigma: 0.05,
            learning_rate: 2e-3,
            epochs: 40,
            anneal_epochs: 4,
            batch_size: 16,
            seed: 99,
        }
    }
}

/// Result of [`pretrain`]: the corpus classifier and its two training logs.
pub struct Pretrained<T> {
    pub model: ClassifierModel<T>,
    pub meta: CheckpointMeta,
    pub log: TrainLog,
    pub anneal_log: Option<TrainLog>,
}

impl<T: Scalar> Pretrained<T> {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(save_checkpoint(path, &self.model, &self.meta)?)
    }
}

/// Trains `spec`'s architecture (ignoring `spec.pretrained`) to classify the
/// corpus at `spec.input_side`.
pub fn pretrain<T: Scalar>(
    spec: &BackboneSpec,
    cfg: &PretrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Pretrained<T>, TrainError> {
    let side = spec.input_side;
    let corpus = generate_corpus::<T>(cfg.per_class, side.max(64), cfg.noise_sigma, cfg.seed)?;
    let classes = corpus.registry.clone();
    let source = corpus.into_source();
    let split = stratified_split(&source.items(), source.registry(), [0.8, 0.1, 0.1], cfg.seed)?;
    let spec = BackboneSpec {
        pretrained: None,
        ..spec.clone()
    };
    let mut model = build::<T>(&spec, classes.len(), cfg.seed)?;
    let preprocess = PreprocessConfig {
        target_side: side,
        normalize: true,
        augment: Some(AugmentConfig {
            seed: cfg.seed,
            ..Default::default()
        }),
    };
    let main = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..Default::default()
    };
    let log = train_with_observer(&mut model, &source, &split, &preprocess, &main, observer)?;
    let anneal_log = if cfg.anneal_epochs > 0 {
        let anneal = TrainConfig {
            learning_rate: cfg.learning_rate / 10.0,
            epochs: cfg.anneal_epochs,
            seed: cfg.seed.wrapping_add(1),
            ..main
        };
        Some(train_with_observer(
            &mut model,
            &source,
            &split,
            &preprocess,
            &anneal,
            observer,
        )?)
    } else {
        None
    };
    let epoch = match &anneal_log {
        Some(a) => cfg.epochs + a.best_epoch,
        None => log.best_epoch,
    };
    let meta = CheckpointMeta::new(spec, classes, preprocess, epoch);
    Ok(Pretrained {
        model,
        meta,
        log,
        anneal_log,
    })
}
