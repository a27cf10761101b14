use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassRegistry, DatasetError, LabeledImage, MemorySource};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;

const BACKGROUND: (f64, f64) = (15.0, 45.0);
const FOREGROUND: (f64, f64) = (170.0, 235.0);
/// Primitive radius as a fraction of the image side.
const RADIUS: (f64, f64) = (0.14, 0.26);

/// Shape rendered for one synthetic class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Disc,
        Primitive::Square,
        Primitive::Triangle,
        Primitive::Cross,
        Primitive::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Disc => "disc",
            Primitive::Square => "square",
            Primitive::Triangle => "triangle",
            Primitive::Cross => "cross",
            Primitive::Ring => "ring",
        }
    }

    /// Class directory name, e.g. `c2_triangle`.
    pub fn class_name(index: usize) -> String {
        format!("c{index}_{}", Self::ALL[index].name())
    }

    /// Whether offset `(dy, dx)` from the centre is inside a primitive of radius `r`.
    fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        match self {
            Primitive::Disc => dy * dy + dx * dx <= r * r,
            Primitive::Square => dy.abs() <= 0.8 * r && dx.abs() <= 0.8 * r,
            Primitive::Triangle => {
                // Apex up, base at 0.8 r below the centre.
                let t = (dy + r) / (1.8 * r);
                (0.0..=1.0).contains(&t) && dx.abs() <= t * r
            }
            Primitive::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= r && dy.abs() <= arm) || (dy.abs() <= r && dx.abs() <= arm)
            }
            Primitive::Ring => {
                let d2 = dy * dy + dx * dx;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
        }
    }
}

/// Inclusive-exclusive pixel box `[y0, y1) x [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BoundingBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    /// Box covering the same region on a `to` x `to` resampling of a `from` x `from` image.
    pub fn rescaled(&self, from: usize, to: usize) -> Self {
        let s = to as f64 / from as f64;
        let lo = |v: usize| ((v as f64 * s).floor() as usize).min(to - 1);
        let hi = |v: usize| ((v as f64 * s).ceil() as usize).clamp(1, to);
        let (y0, x0) = (lo(self.y0), lo(self.x0));
        Self {
            y0,
            x0,
            y1: hi(self.y1).max(y0 + 1),
            x1: hi(self.x1).max(x0 + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    /// Noise standard deviation on the `[0, 1]` intensity scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSynthetic(m));
        if !(2..=5).contains(&self.classes) {
            return bad(format!("classes must be in 2..=5, got {}", self.classes));
        }
        if self.side < 64 {
            return bad(format!("side must be at least 64, got {}", self.side));
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Generated images with their foreground boxes and masks, index-aligned.
#[derive(Clone, Debug)]
pub struct SyntheticDataset<T> {
    pub registry: ClassRegistry,
    pub images: Vec<LabeledImage<T>>,
    pub boxes: Vec<BoundingBox>,
    pub masks: Vec<Vec<bool>>,
}

#[derive(Serialize)]
struct BoxRecord<'a> {
    source_id: &'a str,
    label: usize,
    #[serde(flatten)]
    bbox: BoundingBox,
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn box_of(&self, source_id: &str) -> Option<BoundingBox> {
        self.images
            .iter()
            .position(|i| i.source_id == source_id)
            .map(|i| self.boxes[i])
    }

    pub fn into_source(self) -> MemorySource<T> {
        MemorySource::new(self.registry, self.images).expect("synthetic labels are within the registry")
    }

    /// Writes `root/<class>/<id>.png` (8-bit RGB) plus `root/boxes.json`.
    pub fn write_to(&self, root: &Path) -> Result<(), DatasetError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        for name in self.registry.names() {
            let dir = root.join(name);
            fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        for img in &self.images {
            let p = &img.pixels;
            let bytes: Vec<u8> = p
                .data()
                .iter()
                .map(|v| v.lossy_f64().round().clamp(0.0, 255.0) as u8)
                .collect();
            let path = root.join(&img.source_id);
            image::RgbImage::from_raw(p.width() as u32, p.height() as u32, bytes)
                .expect("synthetic images are 3-channel")
                .save(&path)
                .map_err(|e| DatasetError::Decode {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
        }
        let records: Vec<BoxRecord> = self
            .images
            .iter()
            .zip(&self.boxes)
            .map(|(i, b)| BoxRecord {
                source_id: &i.source_id,
                label: i.label,
                bbox: *b,
            })
            .collect();
        let path = root.join("boxes.json");
        let json = serde_json::to_string_pretty(&records).expect("boxes serialize");
        fs::write(&path, json).map_err(io(&path))
    }
}

fn render<T: Scalar>(
    shape: Primitive,
    side: usize,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> (Image<T>, BoundingBox, Vec<bool>) {
    let s = side as f64;
    let r = rng.random_range(RADIUS.0 * s..=RADIUS.1 * s);
    let margin = r + 1.0;
    let cy = rng.random_range(margin..=s - margin);
    let cx = rng.random_range(margin..=s - margin);
    let bg = rng.random_range(BACKGROUND.0..=BACKGROUND.1);
    let fg = rng.random_range(FOREGROUND.0..=FOREGROUND.1);
    let noise = Normal::new(0.0, noise_sigma * 255.0).expect("sigma validated");

    let mut mask = vec![false; side * side];
    let (mut y0, mut x0, mut y1, mut x1) = (side, side, 0, 0);
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let inside = shape.contains(y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, r);
            if inside {
                mask[y * side + x] = true;
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y + 1);
                x1 = x1.max(x + 1);
            }
            let base = if inside { fg } else { bg };
            let n = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = T::from_f64_lossy((base + n).round().clamp(0.0, 255.0));
            data.extend([v, v, v]);
        }
    }
    (Image::new(side, side, 3, data), BoundingBox { y0, x0, y1, x1 }, mask)
}

/// Renders `per_class` images for each of the first `classes` primitives.
/// Each image draws from its own stream keyed by `(seed, class, index)`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticDataset<T>, DatasetError> {
    spec.validate()?;
    let names: Vec<String> = (0..spec.classes).map(Primitive::class_name).collect();
    let registry = ClassRegistry::new(names.clone())?;
    let n = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for (c, name) in names.iter().enumerate() {
        for i in 0..spec.per_class {
            let mut r = rng::stream(spec.seed, &["synthetic", name, &i.to_string()]);
            let (img, bbox, mask) = render(Primitive::ALL[c], spec.side, spec.noise_sigma, &mut r);
            images.push(LabeledImage::new(img, c, format!("{name}/{i:05}.png")));
            boxes.push(bbox);
            masks.push(mask);
        }
    }
    Ok(SyntheticDataset {
        registry,
        images,
        boxes,
        masks,
    })
}
