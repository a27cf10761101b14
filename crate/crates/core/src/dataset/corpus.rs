//! Generic pretraining corpus: shapes disjoint from the evaluation
//! primitives, used to give backbones transferable low-level features.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassRegistry, DatasetError, LabeledImage, SyntheticDataset};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;

/// Class names of the pretraining corpus.
pub const CORPUS_CLASSES: [&str; 10] = [
    "p0_ellipse",
    "p1_star",
    "p2_crescent",
    "p3_hexagon",
    "p4_arrow",
    "p5_stripes",
    "p6_rhombus",
    "p7_lshape",
    "p8_semicircle",
    "p9_trapezoid",
];

fn in_polygon(pts: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (yi, xi) = pts[i];
        let (yj, xj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn star() -> Vec<(f64, f64)> {
    (0..10)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / 5.0;
            let r = if i % 2 == 0 { 1.0 } else { 0.42 };
            (-r * a.cos(), r * a.sin())
        })
        .collect()
}

fn hexagon() -> Vec<(f64, f64)> {
    (0..6)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / 3.0;
            (a.sin(), a.cos())
        })
        .collect()
}

fn rhombus(aspect: f64) -> Vec<(f64, f64)> {
    vec![(-1.0, 0.0), (0.0, aspect), (1.0, 0.0), (0.0, -aspect)]
}

fn lshape() -> Vec<(f64, f64)> {
    vec![
        (-1.0, -0.8),
        (-1.0, -0.2),
        (0.4, -0.2),
        (0.4, 0.8),
        (1.0, 0.8),
        (1.0, -0.8),
    ]
}

fn trapezoid(aspect: f64) -> Vec<(f64, f64)> {
    vec![(-0.7, -aspect), (-0.7, aspect), (0.7, 1.0), (0.7, -1.0)]
}

fn arrow() -> Vec<(f64, f64)> {
    vec![
        (-0.25, -1.0),
        (-0.25, 0.1),
        (-0.7, 0.1),
        (0.0, 1.0),
        (0.7, 0.1),
        (0.25, 0.1),
        (0.25, -1.0),
    ]
    .into_iter()
    .map(|(x, y)| (y, x))
    .collect()
}

/// Whether unit-frame point `(v, u)` (rotation already undone) is inside
/// corpus shape `class`; `aspect` parametrises the ellipse and stripes.
fn inside(class: usize, v: f64, u: f64, aspect: f64) -> bool {
    match class {
        0 => (v / aspect).powi(2) + u * u <= 1.0,
        1 => in_polygon(&star(), v, u),
        2 => v * v + u * u <= 1.0 && (v * v + (u - 0.45).powi(2)) > 0.8 * 0.8,
        3 => in_polygon(&hexagon(), v, u),
        4 => in_polygon(&arrow(), v, u),
        5 => v.abs() <= 1.0 && u.abs() <= 1.0 && ((v + 1.0) / (2.0 * aspect / 3.0)).floor() as i64 % 2 == 0,
        6 => in_polygon(&rhombus(aspect), v, u),
        7 => in_polygon(&lshape(), v, u),
        8 => v * v + u * u <= 1.0 && v >= -0.1,
        9 => in_polygon(&trapezoid(aspect), v, u),
        _ => unreachable!("corpus class {class}"),
    }
}

/// Renders `per_class` images of each corpus shape at random position,
/// scale and orientation, in the same intensity regime as
/// [`generate_synthetic`](super::generate_synthetic).
pub fn generate_corpus<T: Scalar>(
    per_class: usize,
    side: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticDataset<T>, DatasetError> {
    if side < 64 || per_class == 0 || !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(DatasetError::InvalidSynthetic(format!(
            "corpus needs side >= 64, per_class >= 1 and sigma >= 0 (got {side}, {per_class}, {noise_sigma})"
        )));
    }
    let names: Vec<String> = CORPUS_CLASSES.iter().map(|s| s.to_string()).collect();
    let registry = ClassRegistry::new(names.clone())?;
    let mut out = SyntheticDataset {
        registry,
        images: Vec::new(),
        boxes: Vec::new(),
        masks: Vec::new(),
    };
    let s = side as f64;
    for (c, name) in names.iter().enumerate() {
        for i in 0..per_class {
            let mut r = rng::stream(seed, &["corpus", name, &i.to_string()]);
            let radius = r.random_range(0.14 * s..=0.26 * s);
            let margin = radius + 1.0;
            let cy = r.random_range(margin..=s - margin);
            let cx = r.random_range(margin..=s - margin);
            let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
            let aspect = r.random_range(0.4..=0.65);
            let bg = r.random_range(15.0..=45.0);
            let fg = r.random_range(170.0..=235.0);
            let noise = Normal::new(0.0, noise_sigma * 255.0).expect("sigma validated");
            let (sn, cs) = theta.sin_cos();
            let mut mask = vec![false; side * side];
            let (mut y0, mut x0, mut y1, mut x1) = (side, side, 0, 0);
            let mut data = Vec::with_capacity(side * side * 3);
            for y in 0..side {
                for x in 0..side {
                    let dy = (y as f64 + 0.5 - cy) / radius;
                    let dx = (x as f64 + 0.5 - cx) / radius;
                    let v = cs * dy + sn * dx;
                    let u = -sn * dy + cs * dx;
                    let hit = inside(c, v, u, aspect);
                    if hit {
                        mask[y * side + x] = true;
                        y0 = y0.min(y);
                        x0 = x0.min(x);
                        y1 = y1.max(y + 1);
                        x1 = x1.max(x + 1);
                    }
                    let n = if noise_sigma > 0.0 { noise.sample(&mut r) } else { 0.0 };
                    let val = T::from_f64_lossy(((if hit { fg } else { bg }) + n).round().clamp(0.0, 255.0));
                    data.extend([val, val, val]);
                }
            }
            out.images.push(LabeledImage::new(
                Image::new(side, side, 3, data),
                c,
                format!("{name}/{i:05}.png"),
            ));
            out.boxes.push(super::BoundingBox { y0, x0, y1, x1 });
            out.masks.push(mask);
        }
    }
    Ok(out)
}
