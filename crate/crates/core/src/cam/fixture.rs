//! Tiny hand-weighted network whose CAM outputs can be worked out on paper.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbones::ClassifierModel;
use crate::image::Image;
use crate::nn::{NetworkBuilder, Op};
use crate::scalar::Scalar;

/// `4x4x1 input -> 1x1 conv (2 ch, bias) -> ReLU [tap "conv"] -> GAP -> dense(2)`.
///
/// Channel 0 computes `ReLU(2x - 0.5)`, channel 1 `ReLU(0.75 - x)`; the
/// dense layer has weights `[[1.5, -0.5], [-1.0, 2.0]]` and bias
/// `[0.1, -0.2]`.
pub struct CamFixture;

impl CamFixture {
    pub const TAP: &'static str = "conv";
    pub const INPUT: [[f64; 4]; 4] = [
        [0.0, 0.5, 1.0, 0.5],
        [0.25, 1.0, 0.75, 0.0],
        [0.0, 0.5, 0.25, 0.0],
        [1.0, 0.0, 0.0, 0.5],
    ];
    pub const CONV_WEIGHT: [f64; 2] = [2.0, -1.0];
    pub const CONV_BIAS: [f64; 2] = [-0.5, 0.75];
    pub const DENSE_WEIGHT: [[f64; 2]; 2] = [[1.5, -0.5], [-1.0, 2.0]];
    pub const DENSE_BIAS: [f64; 2] = [0.1, -0.2];

    pub fn model<T: Scalar>() -> ClassifierModel<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = NetworkBuilder::<T, _>::new(&mut rng, 1);
        let x = b.input();
        let c = b.conv("conv.conv", x, 2, (1, 1), 1, (0, 0), 1, true);
        if let Op::Conv(conv) = &mut b.node_mut(c).op {
            conv.weight.value = Self::CONV_WEIGHT.iter().map(|&v| T::from_f64_lossy(v)).collect();
            if let Some(bias) = &mut conv.bias {
                bias.value = Self::CONV_BIAS.iter().map(|&v| T::from_f64_lossy(v)).collect();
            }
        }
        let a = b.relu("conv.relu", c);
        b.tap(a, Self::TAP);
        let g = b.global_avg_pool("pool", a);
        let out = b.linear("head.fc", g, 2);
        if let Op::Linear(fc) = &mut b.node_mut(out).op {
            fc.weight.value = Self::DENSE_WEIGHT
                .iter()
                .flatten()
                .map(|&v| T::from_f64_lossy(v))
                .collect();
            fc.bias.value = Self::DENSE_BIAS.iter().map(|&v| T::from_f64_lossy(v)).collect();
        }
        ClassifierModel::custom("cam-fixture", b.finish(out), 2, 4, Self::TAP)
    }

    pub fn input<T: Scalar>() -> Image<T> {
        Image::from_fn(4, 4, 1, |y, x, _| T::from_f64_lossy(Self::INPUT[y][x]))
    }
}
