//! Inception-v3 with factorised 1xn / nx1 convolutions.

use rand::Rng;

use crate::nn::{NetworkBuilder, NodeId};
use crate::scalar::Scalar;

/// Reference channel counts are divided by this factor.
const DIVISOR: usize = 8;

fn ch(c: usize) -> usize {
    (c / DIVISOR).max(1)
}

/// Convolution + batch norm + ReLU with an explicit rectangular geometry.
fn basic<T: Scalar, R: Rng>(
    b: &mut NetworkBuilder<'_, T, R>,
    name: &str,
    x: NodeId,
    out: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> NodeId {
    let h = b.conv(&format!("{name}.conv"), x, ch(out), kernel, stride, padding, 1, false);
    let h = b.batch_norm(&format!("{name}.bn"), h);
    b.relu(&format!("{name}.relu"), h)
}

fn pool_branch<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId, out: usize) -> NodeId {
    let p = b.avg_pool(&format!("{name}.branch_pool.avg"), x, 3, 1, 1);
    basic(b, &format!("{name}.branch_pool"), p, out, (1, 1), 1, (0, 0))
}

fn inception_a<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId, pool: usize) -> NodeId {
    let b1 = basic(b, &format!("{name}.branch1x1"), x, 64, (1, 1), 1, (0, 0));
    let b5 = basic(b, &format!("{name}.branch5x5_1"), x, 48, (1, 1), 1, (0, 0));
    let b5 = basic(b, &format!("{name}.branch5x5_2"), b5, 64, (5, 5), 1, (2, 2));
    let d = basic(b, &format!("{name}.branch3x3dbl_1"), x, 64, (1, 1), 1, (0, 0));
    let d = basic(b, &format!("{name}.branch3x3dbl_2"), d, 96, (3, 3), 1, (1, 1));
    let d = basic(b, &format!("{name}.branch3x3dbl_3"), d, 96, (3, 3), 1, (1, 1));
    let p = pool_branch(b, name, x, pool);
    b.concat(&format!("{name}.cat"), &[b1, b5, d, p])
}

fn inception_b<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let b3 = basic(b, &format!("{name}.branch3x3"), x, 384, (3, 3), 2, (0, 0));
    let d = basic(b, &format!("{name}.branch3x3dbl_1"), x, 64, (1, 1), 1, (0, 0));
    let d = basic(b, &format!("{name}.branch3x3dbl_2"), d, 96, (3, 3), 1, (1, 1));
    let d = basic(b, &format!("{name}.branch3x3dbl_3"), d, 96, (3, 3), 2, (0, 0));
    let p = b.max_pool(&format!("{name}.branch_pool"), x, 3, 2, 0);
    b.concat(&format!("{name}.cat"), &[b3, d, p])
}

fn inception_c<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId, c7: usize) -> NodeId {
    let (row, col) = ((1, 7), (7, 1));
    let (prow, pcol) = ((0, 3), (3, 0));
    let b1 = basic(b, &format!("{name}.branch1x1"), x, 192, (1, 1), 1, (0, 0));
    let s = basic(b, &format!("{name}.branch7x7_1"), x, c7, (1, 1), 1, (0, 0));
    let s = basic(b, &format!("{name}.branch7x7_2"), s, c7, row, 1, prow);
    let s = basic(b, &format!("{name}.branch7x7_3"), s, 192, col, 1, pcol);
    let d = basic(b, &format!("{name}.branch7x7dbl_1"), x, c7, (1, 1), 1, (0, 0));
    let d = basic(b, &format!("{name}.branch7x7dbl_2"), d, c7, col, 1, pcol);
    let d = basic(b, &format!("{name}.branch7x7dbl_3"), d, c7, row, 1, prow);
    let d = basic(b, &format!("{name}.branch7x7dbl_4"), d, c7, col, 1, pcol);
    let d = basic(b, &format!("{name}.branch7x7dbl_5"), d, 192, row, 1, prow);
    let p = pool_branch(b, name, x, 192);
    b.concat(&format!("{name}.cat"), &[b1, s, d, p])
}

fn inception_d<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let b3 = basic(b, &format!("{name}.branch3x3_1"), x, 192, (1, 1), 1, (0, 0));
    let b3 = basic(b, &format!("{name}.branch3x3_2"), b3, 320, (3, 3), 2, (0, 0));
    let s = basic(b, &format!("{name}.branch7x7x3_1"), x, 192, (1, 1), 1, (0, 0));
    let s = basic(b, &format!("{name}.branch7x7x3_2"), s, 192, (1, 7), 1, (0, 3));
    let s = basic(b, &format!("{name}.branch7x7x3_3"), s, 192, (7, 1), 1, (3, 0));
    let s = basic(b, &format!("{name}.branch7x7x3_4"), s, 192, (3, 3), 2, (0, 0));
    let p = b.max_pool(&format!("{name}.branch_pool"), x, 3, 2, 0);
    b.concat(&format!("{name}.cat"), &[b3, s, p])
}

fn inception_e<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let b1 = basic(b, &format!("{name}.branch1x1"), x, 320, (1, 1), 1, (0, 0));
    let s = basic(b, &format!("{name}.branch3x3_1"), x, 384, (1, 1), 1, (0, 0));
    let sa = basic(b, &format!("{name}.branch3x3_2a"), s, 384, (1, 3), 1, (0, 1));
    let sb = basic(b, &format!("{name}.branch3x3_2b"), s, 384, (3, 1), 1, (1, 0));
    let d = basic(b, &format!("{name}.branch3x3dbl_1"), x, 448, (1, 1), 1, (0, 0));
    let d = basic(b, &format!("{name}.branch3x3dbl_2"), d, 384, (3, 3), 1, (1, 1));
    let da = basic(b, &format!("{name}.branch3x3dbl_3a"), d, 384, (1, 3), 1, (0, 1));
    let db = basic(b, &format!("{name}.branch3x3dbl_3b"), d, 384, (3, 1), 1, (1, 0));
    let p = pool_branch(b, name, x, 192);
    b.concat(&format!("{name}.cat"), &[b1, sa, sb, da, db, p])
}

pub fn build<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>) -> NodeId {
    let x = b.input();
    let x = basic(b, "Conv2d_1a_3x3", x, 32, (3, 3), 2, (0, 0));
    let x = basic(b, "Conv2d_2a_3x3", x, 32, (3, 3), 1, (0, 0));
    let x = basic(b, "Conv2d_2b_3x3", x, 64, (3, 3), 1, (1, 1));
    let x = b.max_pool("maxpool1", x, 3, 2, 0);
    let x = basic(b, "Conv2d_3b_1x1", x, 80, (1, 1), 1, (0, 0));
    let x = basic(b, "Conv2d_4a_3x3", x, 192, (3, 3), 1, (0, 0));
    b.tap(x, "Conv2d_4a_3x3");
    let x = b.max_pool("maxpool2", x, 3, 2, 0);
    let x = inception_a(b, "Mixed_5b", x, 32);
    b.tap(x, "Mixed_5b");
    let x = inception_a(b, "Mixed_5c", x, 64);
    b.tap(x, "Mixed_5c");
    let x = inception_a(b, "Mixed_5d", x, 64);
    b.tap(x, "Mixed_5d");
    let x = inception_b(b, "Mixed_6a", x);
    b.tap(x, "Mixed_6a");
    let mut x = x;
    for (name, c7) in [
        ("Mixed_6b", 128),
        ("Mixed_6c", 160),
        ("Mixed_6d", 160),
        ("Mixed_6e", 192),
    ] {
        x = inception_c(b, name, x, c7);
        b.tap(x, name);
    }
    let x = inception_d(b, "Mixed_7a", x);
    b.tap(x, "Mixed_7a");
    let x = inception_e(b, "Mixed_7b", x);
    b.tap(x, "Mixed_7b");
    let x = inception_e(b, "Mixed_7c", x);
    b.tap(x, "Mixed_7c")
}
