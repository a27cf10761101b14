//! Architecture registry and per-family graph builders.
//!
//! Every family keeps its reference block layout (stage depths, branch
//! topology, kernel shapes) with channel widths reduced so that the whole
//! registry trains on a CPU.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{NetworkBuilder, NodeId};
use crate::scalar::Scalar;

mod densenet;
mod inception;
mod mobilenet;
mod resnet;
mod xception;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    Xception,
    DenseNet201,
    DenseNet121,
    DenseNet169,
    MobileNetV3,
    InceptionV3,
    ResNet50,
    ResNet101,
    ResNet152,
}

impl Architecture {
    pub const ALL: [Architecture; 9] = [
        Architecture::Xception,
        Architecture::DenseNet201,
        Architecture::DenseNet121,
        Architecture::DenseNet169,
        Architecture::MobileNetV3,
        Architecture::InceptionV3,
        Architecture::ResNet50,
        Architecture::ResNet101,
        Architecture::ResNet152,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Xception => "Xception",
            Architecture::DenseNet201 => "DenseNet201",
            Architecture::DenseNet121 => "DenseNet121",
            Architecture::DenseNet169 => "DenseNet169",
            Architecture::MobileNetV3 => "MobileNetV3",
            Architecture::InceptionV3 => "InceptionV3",
            Architecture::ResNet50 => "ResNet50",
            Architecture::ResNet101 => "ResNet101",
            Architecture::ResNet152 => "ResNet152",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }

    /// Native input resolution; Inception-style networks use 299.
    pub fn default_input_side(self) -> usize {
        match self {
            Architecture::InceptionV3 | Architecture::Xception => 299,
            _ => 256,
        }
    }

    /// Smallest input that survives every unpadded reduction.
    pub fn min_input_side(self) -> usize {
        match self {
            Architecture::InceptionV3 => 75,
            Architecture::Xception => 71,
            _ => 32,
        }
    }

    /// Last convolutional feature map before global pooling.
    pub fn last_conv_layer(self) -> &'static str {
        match self {
            Architecture::ResNet50 | Architecture::ResNet101 | Architecture::ResNet152 => "layer4",
            Architecture::DenseNet121
            | Architecture::DenseNet169
            | Architecture::DenseNet201
            | Architecture::MobileNetV3 => "features",
            Architecture::InceptionV3 => "Mixed_7c",
            Architecture::Xception => "block14_sepconv2_act",
        }
    }

    /// Learning rate and epoch count of the published fine-tuning regime.
    pub fn reference_regime(self) -> (f64, usize) {
        let epochs = match self {
            Architecture::DenseNet201 => 15,
            Architecture::DenseNet169 => 10,
            Architecture::ResNet152 => 11,
            Architecture::ResNet101 => 15,
            Architecture::MobileNetV3 => 14,
            Architecture::InceptionV3 => 15,
            Architecture::ResNet50 => 12,
            Architecture::Xception => 13,
            Architecture::DenseNet121 => 15,
        };
        (1e-4, epochs)
    }

    /// Adds the feature extractor to `b`; returns its final feature map.
    pub(crate) fn build_features<T: Scalar, R: Rng>(self, b: &mut NetworkBuilder<'_, T, R>) -> NodeId {
        match self {
            Architecture::ResNet50 => resnet::build(b, [3, 4, 6, 3]),
            Architecture::ResNet101 => resnet::build(b, [3, 4, 23, 3]),
            Architecture::ResNet152 => resnet::build(b, [3, 8, 36, 3]),
            Architecture::DenseNet121 => densenet::build(b, [6, 12, 24, 16]),
            Architecture::DenseNet169 => densenet::build(b, [6, 12, 32, 32]),
            Architecture::DenseNet201 => densenet::build(b, [6, 12, 48, 32]),
            Architecture::MobileNetV3 => mobilenet::build(b),
            Architecture::InceptionV3 => inception::build(b),
            Architecture::Xception => xception::build(b),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownArchitecture {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// `k x k` convolution ("same" padding) + batch norm, optional ReLU.
pub(crate) fn conv_bn<T: Scalar, R: Rng>(
    b: &mut NetworkBuilder<'_, T, R>,
    name: &str,
    x: NodeId,
    out: usize,
    k: usize,
    stride: usize,
    relu: bool,
) -> NodeId {
    let h = b.conv(
        &format!("{name}.conv"),
        x,
        out,
        (k, k),
        stride,
        (k / 2, k / 2),
        1,
        false,
    );
    let h = b.batch_norm(&format!("{name}.bn"), h);
    if relu {
        b.relu(&format!("{name}.relu"), h)
    } else {
        h
    }
}
