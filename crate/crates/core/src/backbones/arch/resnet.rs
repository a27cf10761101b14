//! Bottleneck residual networks (ResNet-50/101/152 stage layouts).

use rand::Rng;

use crate::nn::{NetworkBuilder, NodeId};
use crate::scalar::Scalar;

use super::conv_bn;

/// Base width of the first stage; the reference networks use 64.
const BASE_WIDTH: usize = 8;
const EXPANSION: usize = 4;

fn bottleneck<T: Scalar, R: Rng>(
    b: &mut NetworkBuilder<'_, T, R>,
    name: &str,
    x: NodeId,
    planes: usize,
    stride: usize,
) -> NodeId {
    let out = planes * EXPANSION;
    let h = conv_bn(b, &format!("{name}.conv1"), x, planes, 1, 1, true);
    let h = conv_bn(b, &format!("{name}.conv2"), h, planes, 3, stride, true);
    let h = conv_bn(b, &format!("{name}.conv3"), h, out, 1, 1, false);
    b.zero_init_gamma(h);
    let shortcut = if stride != 1 || b.channels(x) != out {
        conv_bn(b, &format!("{name}.downsample"), x, out, 1, stride, false)
    } else {
        x
    };
    let s = b.add(&format!("{name}.add"), h, shortcut);
    b.relu(&format!("{name}.relu"), s)
}

/// Builds the feature extractor; returns the tapped final stage.
pub fn build<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, blocks: [usize; 4]) -> NodeId {
    let x = b.input();
    let x = b.conv("conv1", x, BASE_WIDTH, (7, 7), 2, (3, 3), 1, false);
    let x = b.batch_norm("bn1", x);
    let x = b.relu("relu", x);
    b.tap(x, "stem");
    let mut x = b.max_pool("maxpool", x, 3, 2, 1);
    for (stage, &n) in blocks.iter().enumerate() {
        let planes = BASE_WIDTH << stage;
        for j in 0..n {
            let stride = if stage > 0 && j == 0 { 2 } else { 1 };
            x = bottleneck(b, &format!("layer{}.{j}", stage + 1), x, planes, stride);
        }
        b.tap(x, &format!("layer{}", stage + 1));
    }
    x
}
