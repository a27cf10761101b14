//! Densely connected networks (DenseNet-121/169/201 block layouts).

use rand::Rng;

use crate::nn::{NetworkBuilder, NodeId};
use crate::scalar::Scalar;

/// Growth rate; the reference networks use 32.
const GROWTH: usize = 8;
const BN_SIZE: usize = 4;

fn dense_layer<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let h = b.batch_norm(&format!("{name}.norm1"), x);
    let h = b.relu(&format!("{name}.relu1"), h);
    let h = b.conv(
        &format!("{name}.conv1"),
        h,
        BN_SIZE * GROWTH,
        (1, 1),
        1,
        (0, 0),
        1,
        false,
    );
    let h = b.batch_norm(&format!("{name}.norm2"), h);
    let h = b.relu(&format!("{name}.relu2"), h);
    let h = b.conv(&format!("{name}.conv2"), h, GROWTH, (3, 3), 1, (1, 1), 1, false);
    b.concat(&format!("{name}.cat"), &[x, h])
}

fn transition<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let out = b.channels(x) / 2;
    let h = b.batch_norm(&format!("{name}.norm"), x);
    let h = b.relu(&format!("{name}.relu"), h);
    let h = b.conv(&format!("{name}.conv"), h, out, (1, 1), 1, (0, 0), 1, false);
    b.avg_pool(&format!("{name}.pool"), h, 2, 2, 0)
}

pub fn build<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, blocks: [usize; 4]) -> NodeId {
    let x = b.input();
    let x = b.conv("features.conv0", x, 2 * GROWTH, (7, 7), 2, (3, 3), 1, false);
    let x = b.batch_norm("features.norm0", x);
    let x = b.relu("features.relu0", x);
    b.tap(x, "stem");
    let mut x = b.max_pool("features.pool0", x, 3, 2, 1);
    for (i, &n) in blocks.iter().enumerate() {
        for j in 0..n {
            x = dense_layer(b, &format!("features.denseblock{}.denselayer{}", i + 1, j + 1), x);
        }
        b.tap(x, &format!("denseblock{}", i + 1));
        if i + 1 < blocks.len() {
            x = transition(b, &format!("features.transition{}", i + 1), x);
            b.tap(x, &format!("transition{}", i + 1));
        }
    }
    let x = b.batch_norm("features.norm5", x);
    let x = b.relu("features.relu5", x);
    b.tap(x, "features")
}
