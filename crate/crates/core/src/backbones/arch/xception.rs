//! Xception: depthwise-separable convolutions in entry, middle and exit
//! flows.

use rand::Rng;

use crate::nn::{NetworkBuilder, NodeId};
use crate::scalar::Scalar;

const DIVISOR: usize = 8;
const MIDDLE_BLOCKS: usize = 8;

fn ch(c: usize) -> usize {
    (c / DIVISOR).max(1)
}

/// Depthwise 3x3 followed by pointwise projection, then batch norm.
fn sep_bn<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId, out: usize) -> NodeId {
    let c = b.channels(x);
    let h = b.conv(&format!("{name}.depthwise"), x, c, (3, 3), 1, (1, 1), c, false);
    let h = b.conv(&format!("{name}.pointwise"), h, ch(out), (1, 1), 1, (0, 0), 1, false);
    b.batch_norm(&format!("{name}_bn"), h)
}

fn residual_proj<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId, out: usize) -> NodeId {
    let r = b.conv(&format!("{name}.conv"), x, ch(out), (1, 1), 2, (0, 0), 1, false);
    b.batch_norm(&format!("{name}.bn"), r)
}

/// Entry/exit block: two separable convs, strided max-pool, projected shortcut.
fn down_block<T: Scalar, R: Rng>(
    b: &mut NetworkBuilder<'_, T, R>,
    block: usize,
    x: NodeId,
    mid: usize,
    out: usize,
    leading_relu: bool,
) -> NodeId {
    let res = residual_proj(b, &format!("block{block}_residual"), x, out);
    let mut h = x;
    if leading_relu {
        h = b.relu(&format!("block{block}_sepconv1_act"), h);
    }
    h = sep_bn(b, &format!("block{block}_sepconv1"), h, mid);
    h = b.relu(&format!("block{block}_sepconv2_act"), h);
    h = sep_bn(b, &format!("block{block}_sepconv2"), h, out);
    h = b.max_pool(&format!("block{block}_pool"), h, 3, 2, 1);
    b.add(&format!("block{block}_add"), h, res)
}

pub fn build<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>) -> NodeId {
    let x = b.input();
    let x = b.conv("block1_conv1", x, ch(32), (3, 3), 2, (0, 0), 1, false);
    let x = b.batch_norm("block1_conv1_bn", x);
    let x = b.relu("block1_conv1_act", x);
    let x = b.conv("block1_conv2", x, ch(64), (3, 3), 1, (0, 0), 1, false);
    let x = b.batch_norm("block1_conv2_bn", x);
    let x = b.relu("block1_conv2_act", x);
    b.tap(x, "block1_conv2_act");

    let x = down_block(b, 2, x, 128, 128, false);
    b.tap(x, "block2");
    let x = down_block(b, 3, x, 256, 256, true);
    b.tap(x, "block3");
    let mut x = down_block(b, 4, x, 728, 728, true);
    b.tap(x, "block4");

    for i in 0..MIDDLE_BLOCKS {
        let block = 5 + i;
        let mut h = x;
        for k in 1..=3 {
            h = b.relu(&format!("block{block}_sepconv{k}_act"), h);
            h = sep_bn(b, &format!("block{block}_sepconv{k}"), h, 728);
        }
        b.zero_init_gamma(h);
        x = b.add(&format!("block{block}_add"), h, x);
        b.tap(x, &format!("block{block}"));
    }

    let x = down_block(b, 13, x, 728, 1024, true);
    b.tap(x, "block13");
    let x = sep_bn(b, "block14_sepconv1", x, 1536);
    let x = b.relu("block14_sepconv1_act", x);
    let x = sep_bn(b, "block14_sepconv2", x, 2048);
    let x = b.relu("block14_sepconv2_act", x);
    b.tap(x, "block14_sepconv2_act")
}
