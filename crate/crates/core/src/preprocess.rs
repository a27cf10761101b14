//! Resize/normalize chain for every split and the stochastic augmentation
//! chain applied to training items only.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledImage;
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;

pub const MIN_TARGET_SIDE: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("target_side must be at least {MIN_TARGET_SIDE}, got {0}")]
    TargetSide(usize),
    #[error("invalid augmentation config: {0}")]
    Augment(String),
    #[error("augmentation requires normalization to be enabled")]
    AugmentWithoutNormalize,
    #[error("`{source_id}` has intensity {value} outside [0, 255]")]
    OutOfRange { source_id: String, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub hflip_prob: f64,
    pub crop_fraction_range: [f64; 2],
    pub brightness_delta_range: [f64; 2],
    pub contrast_factor_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            hflip_prob: 0.5,
            crop_fraction_range: [0.85, 1.0],
            brightness_delta_range: [-0.1, 0.1],
            contrast_factor_range: [0.9, 1.1],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every step degenerate at the identity.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            hflip_prob: 0.0,
            crop_fraction_range: [1.0, 1.0],
            brightness_delta_range: [0.0, 0.0],
            contrast_factor_range: [1.0, 1.0],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let err = |m: String| Err(PreprocessError::Augment(m));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(self.rotation_max_deg.is_finite() && self.rotation_max_deg >= 0.0) {
            return err(format!("rotation_max_deg must be >= 0, got {}", self.rotation_max_deg));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return err(format!("hflip_prob must be in [0, 1], got {}", self.hflip_prob));
        }
        let [lo, hi] = self.crop_fraction_range;
        if !ordered(self.crop_fraction_range) || lo <= 0.0 || hi > 1.0 {
            return err(format!(
                "crop_fraction_range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
            ));
        }
        if !ordered(self.brightness_delta_range) {
            return err(format!(
                "brightness_delta_range must be ordered, got {:?}",
                self.brightness_delta_range
            ));
        }
        let [lo, _] = self.contrast_factor_range;
        if !ordered(self.contrast_factor_range) || lo < 0.0 {
            return err(format!(
                "contrast_factor_range must be ordered and non-negative, got {:?}",
                self.contrast_factor_range
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_side: usize,
    pub normalize: bool,
    pub augment: Option<AugmentConfig>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_side: 256,
            normalize: true,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.target_side < MIN_TARGET_SIDE {
            return Err(PreprocessError::TargetSide(self.target_side));
        }
        if let Some(a) = &self.augment {
            if !self.normalize {
                return Err(PreprocessError::AugmentWithoutNormalize);
            }
            a.validate()?;
        }
        Ok(())
    }
}

/// Bilinear resize to `side x side`.
pub fn resize<T: Scalar>(img: &LabeledImage<T>, side: usize) -> LabeledImage<T> {
    img.with_pixels(img.pixels.resize(side, side))
}

/// Divides stored intensities by 255.
pub fn normalize<T: Scalar>(img: &LabeledImage<T>) -> Result<LabeledImage<T>, PreprocessError> {
    let max = T::from_f64_lossy(255.0);
    if let Some(&bad) = img.pixels.data().iter().find(|&&v| !(v >= T::zero() && v <= max)) {
        return Err(PreprocessError::OutOfRange {
            source_id: img.source_id.clone(),
            value: bad.lossy_f64(),
        });
    }
    Ok(img.with_pixels(img.pixels.map(|v| v / max)))
}

fn rotate<T: Scalar>(img: &Image<T>, degrees: f64) -> Image<T> {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, ch| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        // Inverse mapping: output pixel pulls from the source rotated back.
        let sy = cy + c * dy - s * dx;
        let sx = cx + s * dy + c * dx;
        img.sample_bilinear(T::from_f64_lossy(sy), T::from_f64_lossy(sx), ch)
    })
}

fn hflip<T: Scalar>(img: &Image<T>) -> Image<T> {
    let w = img.width();
    Image::from_fn(img.height(), w, img.channels(), |y, x, c| img.get(y, w - 1 - x, c))
}

fn crop_resize<T: Scalar>(img: &Image<T>, fraction: f64, rng: &mut impl Rng) -> Image<T> {
    let (h, w) = (img.height(), img.width());
    let ch = ((fraction * h as f64).round() as usize).clamp(1, h);
    let cw = ((fraction * w as f64).round() as usize).clamp(1, w);
    let oy = rng.random_range(0..=h - ch);
    let ox = rng.random_range(0..=w - cw);
    if ch == h && cw == w {
        return img.clone();
    }
    Image::from_fn(ch, cw, img.channels(), |y, x, c| img.get(oy + y, ox + x, c)).resize(h, w)
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        // Keep stream consumption independent of the range width.
        let _: f64 = rng.random();
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Rotation, horizontal flip, crop-and-resize, brightness offset, contrast
/// scaling about the mean, then clipping to `[0, 1]`.
pub fn augment<T: Scalar>(img: &LabeledImage<T>, cfg: &AugmentConfig, rng: &mut impl Rng) -> LabeledImage<T> {
    let angle = uniform(rng, [-cfg.rotation_max_deg, cfg.rotation_max_deg]);
    let flip = rng.random::<f64>() < cfg.hflip_prob;
    let crop = uniform(rng, cfg.crop_fraction_range);
    let delta = uniform(rng, cfg.brightness_delta_range);
    let factor = uniform(rng, cfg.contrast_factor_range);

    let mut px = if angle != 0.0 {
        rotate(&img.pixels, angle)
    } else {
        img.pixels.clone()
    };
    if flip {
        px = hflip(&px);
    }
    px = crop_resize(&px, crop, rng);
    if delta != 0.0 {
        let d = T::from_f64_lossy(delta);
        px = px.map(|v| v + d);
    }
    if factor != 1.0 {
        let n = T::from_usize_lossy(px.data().len());
        let mean = px.data().iter().copied().sum::<T>() / n;
        let f = T::from_f64_lossy(factor);
        px = px.map(|v| mean + f * (v - mean));
    }
    let (lo, hi) = (T::zero(), T::one());
    img.with_pixels(px.map(|v| v.max(lo).min(hi)))
}

/// Per-item augmentation stream keyed by `(seed, source_id, epoch)`.
pub fn augment_stream(seed: u64, source_id: &str, epoch: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &["augment", source_id, &epoch.to_string()])
}

/// Resize to `target_side`, normalize, then resize to the model's input side.
pub fn prepare_eval<T: Scalar>(
    img: &LabeledImage<T>,
    cfg: &PreprocessConfig,
    input_side: usize,
) -> Result<LabeledImage<T>, PreprocessError> {
    let mut out = resize(img, cfg.target_side);
    if cfg.normalize {
        out = normalize(&out)?;
    }
    Ok(resize(&out, input_side))
}

/// [`prepare_eval`] with augmentation inserted after normalization.
pub fn prepare_train<T: Scalar>(
    img: &LabeledImage<T>,
    cfg: &PreprocessConfig,
    input_side: usize,
    epoch: usize,
) -> Result<LabeledImage<T>, PreprocessError> {
    let mut out = resize(img, cfg.target_side);
    if cfg.normalize {
        out = normalize(&out)?;
    }
    if let Some(a) = &cfg.augment {
        out = augment(&out, a, &mut augment_stream(a.seed, &img.source_id, epoch));
    }
    Ok(resize(&out, input_side))
}
