//! GradCAM, GradCAM++, ScoreCAM and LayerCAM heatmaps from captured taps,
//! plus upsampling, normalization and colour overlays.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{capture, ClassifierModel, ModelError, TapResult, Target};
use crate::image::Image;
use crate::scalar::Scalar;

mod fixture;
mod score;

pub use fixture::CamFixture;
pub use score::{score_cam, score_cam_with_tap, softmax, DEFAULT_SCORE_BATCH};

#[derive(Debug, Error)]
pub enum CamError {
    #[error("tap `{0}` has zero-size maps")]
    EmptyMap(String),
    #[error("heatmap is {map:?} but the image is {image:?}")]
    SizeMismatch { map: (usize, usize), image: (usize, usize) },
    #[error("overlay needs a normalized heatmap")]
    NotNormalized,
    #[error("alpha must be in [0, 1], got {0}")]
    Alpha(f64),
    #[error("score batch size must be at least 1")]
    Batch,
    #[error("unknown CAM method `{0}`; expected gradcam, gradcampp, scorecam or layercam")]
    UnknownMethod(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamMethod {
    GradCam,
    GradCamPp,
    LayerCam,
    ScoreCam,
}

impl CamMethod {
    /// Panel order.
    pub const ALL: [CamMethod; 4] = [
        CamMethod::GradCam,
        CamMethod::GradCamPp,
        CamMethod::LayerCam,
        CamMethod::ScoreCam,
    ];

    /// File-name form.
    pub fn slug(self) -> &'static str {
        match self {
            CamMethod::GradCam => "gradcam",
            CamMethod::GradCamPp => "gradcampp",
            CamMethod::LayerCam => "layercam",
            CamMethod::ScoreCam => "scorecam",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CamMethod::GradCam => "GradCAM",
            CamMethod::GradCamPp => "GradCAM++",
            CamMethod::LayerCam => "LayerCAM",
            CamMethod::ScoreCam => "ScoreCAM",
        }
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CamMethod {
    type Err = CamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        let key = key.replace("++", "pp");
        Self::ALL
            .into_iter()
            .find(|m| m.slug() == key)
            .ok_or_else(|| CamError::UnknownMethod(s.to_string()))
    }
}

/// Single-channel relevance map.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    pub height: usize,
    pub width: usize,
    /// Row-major `height x width`.
    pub values: Vec<T>,
    pub normalized: bool,
    pub method: CamMethod,
    pub tap_layer: String,
    pub target_class: usize,
}

impl<T: Scalar> Heatmap<T> {
    fn raw(tap: &TapResult<T>, method: CamMethod, values: Vec<T>) -> Self {
        Self {
            height: tap.height(),
            width: tap.width(),
            values,
            normalized: false,
            method,
            tap_layer: tap.layer().to_string(),
            target_class: tap.target_class(),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn to_image(&self) -> Image<T> {
        Image::new(self.height, self.width, 1, self.values.clone())
    }

    /// Mean value inside and outside the rectangle `[y0, y1) x [x0, x1)`.
    pub fn mean_inside_outside(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> (f64, f64) {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(y, x).lossy_f64();
                if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                    si += v;
                    ni += 1;
                } else {
                    so += v;
                    no += 1;
                }
            }
        }
        (si / ni.max(1) as f64, so / no.max(1) as f64)
    }
}

fn check_tap<T: Scalar>(tap: &TapResult<T>) -> Result<(), CamError> {
    if tap.channels() == 0 || tap.height() == 0 || tap.width() == 0 {
        return Err(CamError::EmptyMap(tap.layer().to_string()));
    }
    Ok(())
}

/// `ReLU(sum_k w_k * A_k)` at tap resolution.
fn weighted_sum<T: Scalar>(tap: &TapResult<T>, weights: &[T]) -> Vec<T> {
    let hw = tap.height() * tap.width();
    let mut out = vec![T::zero(); hw];
    for (k, &w) in weights.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(tap.activation_channel(k)) {
            *o += w * a;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(T::zero()));
    out
}

pub fn grad_cam<T: Scalar>(tap: &TapResult<T>) -> Result<Heatmap<T>, CamError> {
    check_tap(tap)?;
    let n = T::from_usize_lossy(tap.height() * tap.width());
    let alphas: Vec<T> = (0..tap.channels())
        .map(|k| tap.gradient_channel(k).iter().copied().sum::<T>() / n)
        .collect();
    Ok(Heatmap::raw(tap, CamMethod::GradCam, weighted_sum(tap, &alphas)))
}

pub fn grad_cam_pp<T: Scalar>(tap: &TapResult<T>) -> Result<Heatmap<T>, CamError> {
    check_tap(tap)?;
    let weights: Vec<T> = (0..tap.channels())
        .map(|k| {
            let a = tap.activation_channel(k);
            let g = tap.gradient_channel(k);
            let sum_ag3: T = a.iter().zip(g).map(|(&a, &g)| a * g * g * g).sum();
            let two = T::from_f64_lossy(2.0);
            g.iter()
                .map(|&g| {
                    let g2 = g * g;
                    let den = two * g2 + sum_ag3;
                    let alpha = if den == T::zero() { T::zero() } else { g2 / den };
                    alpha * g.max(T::zero())
                })
                .sum()
        })
        .collect();
    Ok(Heatmap::raw(tap, CamMethod::GradCamPp, weighted_sum(tap, &weights)))
}

pub fn layer_cam<T: Scalar>(tap: &TapResult<T>) -> Result<Heatmap<T>, CamError> {
    check_tap(tap)?;
    let hw = tap.height() * tap.width();
    let mut out = vec![T::zero(); hw];
    for k in 0..tap.channels() {
        for ((o, &a), &g) in out
            .iter_mut()
            .zip(tap.activation_channel(k))
            .zip(tap.gradient_channel(k))
        {
            *o += g.max(T::zero()) * a;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(T::zero()));
    Ok(Heatmap::raw(tap, CamMethod::LayerCam, out))
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize<T: Scalar>(values: &[T]) -> Vec<T> {
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return vec![T::zero(); values.len()];
    }
    let span = hi - lo;
    values.iter().map(|&v| (v - lo) / span).collect()
}

/// Bilinear upsampling to `side x side`, then min-max normalization.
pub fn postprocess<T: Scalar>(map: &Heatmap<T>, side: usize) -> Heatmap<T> {
    let up = map.to_image().resize(side, side);
    Heatmap {
        height: side,
        width: side,
        values: min_max_normalize(up.data()),
        normalized: true,
        method: map.method,
        tap_layer: map.tap_layer.clone(),
        target_class: map.target_class,
    }
}

/// Viridis colour of `v` in `[0, 1]`, as `[0, 1]` RGB.
pub fn colormap(v: f64) -> [f64; 3] {
    let c = colorous::VIRIDIS.eval_continuous(v.clamp(0.0, 1.0));
    [c.r as f64 / 255.0, c.g as f64 / 255.0, c.b as f64 / 255.0]
}

/// `(1 - alpha) * image + alpha * viridis(map)`; single-channel images are
/// replicated to grey RGB first.
pub fn overlay<T: Scalar>(img: &Image<T>, map: &Heatmap<T>, alpha: f64) -> Result<Image<T>, CamError> {
    if !map.normalized {
        return Err(CamError::NotNormalized);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CamError::Alpha(alpha));
    }
    if (map.height, map.width) != (img.height(), img.width()) {
        return Err(CamError::SizeMismatch {
            map: (map.height, map.width),
            image: (img.height(), img.width()),
        });
    }
    let rgb = if img.channels() == 3 {
        img.clone()
    } else {
        img.to_gray().replicate_channels(3)
    };
    let a = T::from_f64_lossy(alpha);
    let keep = T::one() - a;
    Ok(Image::from_fn(img.height(), img.width(), 3, |y, x, c| {
        let heat = T::from_f64_lossy(colormap(map.get(y, x).lossy_f64())[c]);
        let base = rgb.get(y, x, c).max(T::zero()).min(T::one());
        if alpha == 0.0 {
            base
        } else if alpha == 1.0 {
            heat
        } else {
            keep * base + a * heat
        }
    }))
}

/// Raw heatmaps for `methods` at `layer`, sharing one capture.
pub fn explain<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Image<T>,
    layer: &str,
    target: Target,
    methods: &[CamMethod],
    score_batch: usize,
) -> Result<Vec<Heatmap<T>>, CamError> {
    let tap = capture(model, input, layer, target)?;
    methods
        .iter()
        .map(|m| match m {
            CamMethod::GradCam => grad_cam(&tap),
            CamMethod::GradCamPp => grad_cam_pp(&tap),
            CamMethod::LayerCam => layer_cam(&tap),
            CamMethod::ScoreCam => score_cam_with_tap(model, input, &tap, score_batch),
        })
        .collect()
}
