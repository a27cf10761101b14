//! Backbone registry, classifier construction with a fresh head, and the
//! layer tap that records activations and target-logit gradients.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::nn::{argmax, GradRequest, Mode, Network, NetworkBuilder};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub mod arch;
pub mod checkpoint;

pub use arch::Architecture;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

/// Prefix of every classification-head node and parameter.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture `{name}`; valid names: {valid}")]
    UnknownArchitecture { name: String, valid: String },
    #[error("unknown tap layer `{layer}`; available tap layers: {}", available.join(", "))]
    UnknownLayer { layer: String, available: Vec<String> },
    #[error("target class {target} out of range for {n_classes} classes")]
    TargetOutOfRange { target: usize, n_classes: usize },
    #[error("a classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("{architecture} needs an input side of at least {min}, got {side}")]
    InputTooSmall {
        architecture: Architecture,
        side: usize,
        min: usize,
    },
    #[error("input is {got:?} but the model expects 1 x {channels} x {side} x {side}")]
    InputShape {
        got: [usize; 4],
        channels: usize,
        side: usize,
    },
    #[error("invalid tap: {0}")]
    InvalidTap(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input channels every backbone expects; grayscale data is replicated.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    pub input_side: usize,
    pub last_conv_layer: String,
    /// Checkpoint whose feature-extractor weights initialise the backbone.
    /// `None` means seeded random initialisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
}

impl BackboneSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            input_side: architecture.default_input_side(),
            last_conv_layer: architecture.last_conv_layer().to_string(),
            pretrained: None,
        }
    }

    pub fn with_input_side(mut self, side: usize) -> Self {
        self.input_side = side;
        self
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained.is_some()
    }
}

/// Which logit a CAM explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Target {
    #[default]
    Predicted,
    Class(usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Predicted => f.write_str("predicted"),
            Target::Class(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("predicted") {
            return Ok(Target::Predicted);
        }
        s.parse()
            .map(Target::Class)
            .map_err(|_| format!("target must be `predicted` or a class index, got `{s}`"))
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Target::Predicted => s.serialize_str("predicted"),
            Target::Class(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Target::Class(i)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Feature extractor followed by global average pooling and one dense
/// layer with `n_classes` outputs.
#[derive(Clone, Debug)]
pub struct ClassifierModel<T> {
    label: String,
    spec: Option<BackboneSpec>,
    input_side: usize,
    last_conv_layer: String,
    n_classes: usize,
    network: Network<T>,
}

impl<T: Scalar> ClassifierModel<T> {
    /// Wraps a hand-built network (test fixtures, experiments). The
    /// network's output must be an `n_classes` logit vector.
    pub fn custom(
        label: impl Into<String>,
        network: Network<T>,
        n_classes: usize,
        input_side: usize,
        last_conv_layer: impl Into<String>,
    ) -> Self {
        Self {
            label: label.into(),
            spec: None,
            input_side,
            last_conv_layer: last_conv_layer.into(),
            n_classes,
            network,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn spec(&self) -> Option<&BackboneSpec> {
        self.spec.as_ref()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn last_conv_layer(&self) -> &str {
        &self.last_conv_layer
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.network
    }

    /// Evaluation-mode logits, `N x n_classes x 1 x 1`.
    pub fn logits(&self, batch: &Tensor<T>) -> Tensor<T> {
        self.network.infer(batch)
    }

    /// Logit vector for each image.
    pub fn predict(&self, images: &[&Image<T>]) -> Vec<Vec<T>> {
        if images.is_empty() {
            return Vec::new();
        }
        let out = self.logits(&crate::image::batch_tensor(images));
        (0..out.batch()).map(|b| out.item(b).to_vec()).collect()
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }
}

/// Builds a classifier for `spec` with a fresh seeded head of `n_classes`
/// outputs.
pub fn build<T: Scalar>(spec: &BackboneSpec, n_classes: usize, seed: u64) -> Result<ClassifierModel<T>, ModelError> {
    if n_classes < 2 {
        return Err(ModelError::TooFewClasses(n_classes));
    }
    let arch = spec.architecture;
    if spec.input_side < arch.min_input_side() {
        return Err(ModelError::InputTooSmall {
            architecture: arch,
            side: spec.input_side,
            min: arch.min_input_side(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetworkBuilder::<T, _>::new(&mut rng, INPUT_CHANNELS);
    let features = arch.build_features(&mut b);
    let pooled = b.global_avg_pool("head.pool", features);
    let logits = b.linear("head.fc", pooled, n_classes);
    let network = b.finish(logits);
    if network.tap_id(&spec.last_conv_layer).is_none() {
        return Err(ModelError::UnknownLayer {
            layer: spec.last_conv_layer.clone(),
            available: network.tap_names(),
        });
    }
    let mut model = ClassifierModel {
        label: arch.name().to_string(),
        spec: Some(spec.clone()),
        input_side: spec.input_side,
        last_conv_layer: spec.last_conv_layer.clone(),
        n_classes,
        network,
    };
    if let Some(path) = &spec.pretrained {
        checkpoint::load_backbone_weights(path, &mut model)?;
    }
    Ok(model)
}

/// Tap-layer names in forward order.
pub fn list_tap_layers<T: Scalar>(model: &ClassifierModel<T>) -> Vec<String> {
    model.network.tap_names()
}

/// Activations and target-logit gradients at one tap layer for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct TapResult<T> {
    layer: String,
    activations: Tensor<T>,
    gradients: Tensor<T>,
    logits: Vec<T>,
    target_class: usize,
}

impl<T: Scalar> TapResult<T> {
    /// Validates shapes and finiteness. Tensors are `1 x C x H x W`.
    pub fn from_parts(
        layer: impl Into<String>,
        activations: Tensor<T>,
        gradients: Tensor<T>,
        logits: Vec<T>,
        target_class: usize,
    ) -> Result<Self, ModelError> {
        if activations.shape() != gradients.shape() {
            return Err(ModelError::InvalidTap(format!(
                "activation shape {:?} differs from gradient shape {:?}",
                activations.shape(),
                gradients.shape()
            )));
        }
        if activations.batch() != 1 {
            return Err(ModelError::InvalidTap("tap tensors must hold one item".into()));
        }
        if !activations.is_finite() || !gradients.is_finite() || logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTap("non-finite values".into()));
        }
        if target_class >= logits.len() {
            return Err(ModelError::TargetOutOfRange {
                target: target_class,
                n_classes: logits.len(),
            });
        }
        Ok(Self {
            layer: layer.into(),
            activations,
            gradients,
            logits,
            target_class,
        })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn activations(&self) -> &Tensor<T> {
        &self.activations
    }

    pub fn gradients(&self) -> &Tensor<T> {
        &self.gradients
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn channels(&self) -> usize {
        self.activations.channels()
    }

    pub fn height(&self) -> usize {
        self.activations.height()
    }

    pub fn width(&self) -> usize {
        self.activations.width()
    }

    pub fn activation_channel(&self, k: usize) -> &[T] {
        let hw = self.height() * self.width();
        &self.activations.data()[k * hw..(k + 1) * hw]
    }

    pub fn gradient_channel(&self, k: usize) -> &[T] {
        let hw = self.height() * self.width();
        &self.gradients.data()[k * hw..(k + 1) * hw]
    }
}

pub(crate) fn check_input<T: Scalar>(model: &ClassifierModel<T>, input: &Tensor<T>) -> Result<(), ModelError> {
    let want = [1, INPUT_CHANNELS, model.input_side, model.input_side];
    let [n, c, _, _] = input.shape();
    // custom fixtures may use other channel counts or sides
    let expected_channels = model.network.nodes()[0].channels;
    if n != 1 || c != expected_channels || (model.spec.is_some() && input.shape() != want) {
        return Err(ModelError::InputShape {
            got: input.shape(),
            channels: expected_channels,
            side: model.input_side,
        });
    }
    Ok(())
}

pub(crate) fn resolve_tap<T: Scalar>(model: &ClassifierModel<T>, layer: &str) -> Result<usize, ModelError> {
    model.network.tap_id(layer).ok_or_else(|| ModelError::UnknownLayer {
        layer: layer.to_string(),
        available: model.network.tap_names(),
    })
}

/// One forward pass recording the tap layer, one reverse pass of the
/// scalar `logit[target]`.
pub fn capture<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Image<T>,
    layer: &str,
    target: Target,
) -> Result<TapResult<T>, ModelError> {
    capture_tensor(model, &input.to_tensor(), layer, target)
}

pub fn capture_tensor<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Tensor<T>,
    layer: &str,
    target: Target,
) -> Result<TapResult<T>, ModelError> {
    let tap = resolve_tap(model, layer)?;
    check_input(model, input)?;
    let trace = model.network.forward(input, Mode::Eval);
    let logits = trace.output().data().to_vec();
    let target_class = match target {
        Target::Predicted => argmax(&logits),
        Target::Class(c) if c < model.n_classes => c,
        Target::Class(c) => {
            return Err(ModelError::TargetOutOfRange {
                target: c,
                n_classes: model.n_classes,
            })
        }
    };
    let mut seed = Tensor::zeros(trace.output().shape());
    seed.data_mut()[target_class] = T::one();
    let grads = model.network.backward(
        &trace,
        seed,
        &GradRequest {
            params: false,
            keep: vec![tap],
            stop_at: Some(tap),
        },
    );
    let activations = trace.value(tap).clone();
    let gradients = grads
        .nodes
        .get(&tap)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(activations.shape()));
    TapResult::from_parts(layer, activations, gradients, logits, target_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_architecture_lists_valid_names() {
        let err = "VGG99".parse::<Architecture>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("VGG99"));
        for a in Architecture::ALL {
            assert!(msg.contains(a.name()));
        }
        assert_eq!(
            "densenet169".parse::<Architecture>().unwrap(),
            Architecture::DenseNet169
        );
    }

    #[test]
    fn target_parsing() {
        assert_eq!("predicted".parse::<Target>().unwrap(), Target::Predicted);
        assert_eq!("2".parse::<Target>().unwrap(), Target::Class(2));
        assert!("best".parse::<Target>().is_err());
        let t: Target = serde_json::from_str("1").unwrap();
        assert_eq!(t, Target::Class(1));
        let t: Target = serde_json::from_str("\"predicted\"").unwrap();
        assert_eq!(t, Target::Predicted);
    }

    #[test]
    fn too_few_classes_rejected() {
        let spec = BackboneSpec::new(Architecture::ResNet50).with_input_side(64);
        assert!(matches!(build::<f32>(&spec, 1, 0), Err(ModelError::TooFewClasses(1))));
    }
}
