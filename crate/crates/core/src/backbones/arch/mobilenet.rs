//! MobileNetV3-Large: inverted residuals with squeeze-excitation and
//! hard-swish.

use rand::Rng;

use crate::nn::{Activation, NetworkBuilder, NodeId};
use crate::scalar::Scalar;

/// Width multiplier applied to the reference channel counts.
const WIDTH: f64 = 0.25;

struct Bneck {
    kernel: usize,
    expand: usize,
    out: usize,
    se: bool,
    act: Activation,
    stride: usize,
}

const fn bneck(kernel: usize, expand: usize, out: usize, se: bool, hs: bool, stride: usize) -> Bneck {
    Bneck {
        kernel,
        expand,
        out,
        se,
        act: if hs { Activation::HardSwish } else { Activation::Relu },
        stride,
    }
}

const LARGE: [Bneck; 15] = [
    bneck(3, 16, 16, false, false, 1),
    bneck(3, 64, 24, false, false, 2),
    bneck(3, 72, 24, false, false, 1),
    bneck(5, 72, 40, true, false, 2),
    bneck(5, 120, 40, true, false, 1),
    bneck(5, 120, 40, true, false, 1),
    bneck(3, 240, 80, false, true, 2),
    bneck(3, 200, 80, false, true, 1),
    bneck(3, 184, 80, false, true, 1),
    bneck(3, 184, 80, false, true, 1),
    bneck(3, 480, 112, true, true, 1),
    bneck(3, 672, 112, true, true, 1),
    bneck(5, 672, 160, true, true, 2),
    bneck(5, 960, 160, true, true, 1),
    bneck(5, 960, 160, true, true, 1),
];

/// Round to a multiple of 8 without dropping more than 10%.
fn make_divisible(v: f64) -> usize {
    let d = 8.0;
    let mut r = ((v + d / 2.0) / d).floor() * d;
    r = r.max(d);
    if r < 0.9 * v {
        r += d;
    }
    r as usize
}

fn scaled(c: usize) -> usize {
    make_divisible(c as f64 * WIDTH)
}

fn conv_bn_act<T: Scalar, R: Rng>(
    b: &mut NetworkBuilder<'_, T, R>,
    name: &str,
    x: NodeId,
    out: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    act: Option<Activation>,
) -> NodeId {
    let p = kernel / 2;
    let h = b.conv(
        &format!("{name}.conv"),
        x,
        out,
        (kernel, kernel),
        stride,
        (p, p),
        groups,
        false,
    );
    let h = b.batch_norm(&format!("{name}.bn"), h);
    match act {
        Some(a) => b.act(&format!("{name}.act"), h, a),
        None => h,
    }
}

fn squeeze_excite<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>, name: &str, x: NodeId) -> NodeId {
    let c = b.channels(x);
    let squeeze = make_divisible(c as f64 / 4.0);
    let s = b.global_avg_pool(&format!("{name}.pool"), x);
    let s = b.conv(&format!("{name}.fc1"), s, squeeze, (1, 1), 1, (0, 0), 1, true);
    let s = b.relu(&format!("{name}.relu"), s);
    let s = b.conv(&format!("{name}.fc2"), s, c, (1, 1), 1, (0, 0), 1, true);
    let s = b.act(&format!("{name}.gate"), s, Activation::HardSigmoid);
    b.channel_scale(&format!("{name}.scale"), x, s)
}

pub fn build<T: Scalar, R: Rng>(b: &mut NetworkBuilder<'_, T, R>) -> NodeId {
    let x = b.input();
    let mut x = conv_bn_act(b, "stem", x, scaled(16), 3, 2, 1, Some(Activation::HardSwish));
    b.tap(x, "stem");
    for (i, cfg) in LARGE.iter().enumerate() {
        let name = format!("blocks.{i}");
        let cin = b.channels(x);
        let exp = scaled(cfg.expand);
        let out = scaled(cfg.out);
        let mut h = x;
        if exp != cin {
            h = conv_bn_act(b, &format!("{name}.expand"), h, exp, 1, 1, 1, Some(cfg.act));
        }
        h = conv_bn_act(
            b,
            &format!("{name}.dw"),
            h,
            exp,
            cfg.kernel,
            cfg.stride,
            exp,
            Some(cfg.act),
        );
        if cfg.se {
            h = squeeze_excite(b, &format!("{name}.se"), h);
        }
        h = conv_bn_act(b, &format!("{name}.project"), h, out, 1, 1, 1, None);
        if cfg.stride == 1 && cin == out {
            h = b.add(&format!("{name}.add"), h, x);
        }
        b.tap(h, &name);
        x = h;
    }
    let last = 960;
    let x = conv_bn_act(b, "features.last", x, last, 1, 1, 1, Some(Activation::HardSwish));
    b.tap(x, "features")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_rounding() {
        assert_eq!(make_divisible(4.0), 8);
        assert_eq!(make_divisible(18.0), 24);
        assert_eq!(make_divisible(240.0), 240);
        assert_eq!(make_divisible(46.0), 48);
    }
}
