//! Raster output: heatmap/overlay encoding, CAM panels, confusion-matrix
//! grids and the grouped performance bar chart.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{GrayImage, Luma, Rgb, RgbImage};

use super::table::{ComparisonTable, TABLE_COLUMNS};
use super::ReportError;
use crate::cam::{CamMethod, Heatmap};
use crate::image::Image;
use crate::metrics::ConfusionMatrix;
use crate::scalar::Scalar;

/// Height of the caption strip above each panel row.
pub const LABEL_BAND: u32 = 12;
const GLYPH: u32 = 8;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Normalized heatmap as 8-bit grayscale.
pub fn heatmap_to_gray<T: Scalar>(map: &Heatmap<T>) -> Result<GrayImage, ReportError> {
    if !map.normalized {
        return Err(ReportError::Render("heatmap must be normalized before encoding".into()));
    }
    Ok(GrayImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        Luma([to_u8(map.get(y as usize, x as usize).lossy_f64())])
    }))
}

/// `[0, 1]` image (1 or 3 channels) as 8-bit RGB.
pub fn image_to_rgb<T: Scalar>(img: &Image<T>) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        let c = |k: usize| to_u8(img.get(y, x, k.min(img.channels() - 1)).lossy_f64());
        Rgb([c(0), c(1), c(2)])
    })
}

/// Draws `text` with its top-left corner at `(x, y)`, clipped to the canvas.
pub fn draw_text(canvas: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = BASIC_FONTS
            .get(ch)
            .or_else(|| BASIC_FONTS.get('?'))
            .expect("ascii glyph");
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    let px = x + (i as i64) * GLYPH as i64 + col;
                    let py = y + row as i64;
                    if px >= 0 && py >= 0 && (px as u32) < canvas.width() && (py as u32) < canvas.height() {
                        canvas.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
}

fn text_width(text: &str) -> u32 {
    text.chars().count() as u32 * GLYPH
}

fn fill_rect(canvas: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, color: Rgb<u8>) {
    for y in y0..(y0 + h).min(canvas.height()) {
        for x in x0..(x0 + w).min(canvas.width()) {
            canvas.put_pixel(x, y, color);
        }
    }
}

/// Quadrant order of the explanation panel.
pub const PANEL_ORDER: [CamMethod; 4] = [
    CamMethod::GradCam,
    CamMethod::GradCamPp,
    CamMethod::LayerCam,
    CamMethod::ScoreCam,
];

/// 2x2 grid of same-size overlays, each captioned above. The result is
/// `2 * side` wide and `2 * (side + LABEL_BAND)` tall.
pub fn explanation_panel(overlays: &[(CamMethod, RgbImage)]) -> Result<RgbImage, ReportError> {
    let find = |m: CamMethod| {
        overlays
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, img)| img)
            .ok_or(ReportError::MissingMethod(m))
    };
    let first = find(PANEL_ORDER[0])?;
    let (w, h) = first.dimensions();
    let mut panel = RgbImage::from_pixel(2 * w, 2 * (h + LABEL_BAND), WHITE);
    for (i, m) in PANEL_ORDER.into_iter().enumerate() {
        let img = find(m)?;
        if img.dimensions() != (w, h) {
            return Err(ReportError::Render(format!(
                "{m} overlay is {:?}, expected {:?}",
                img.dimensions(),
                (w, h)
            )));
        }
        let ox = (i as u32 % 2) * w;
        let oy = (i as u32 / 2) * (h + LABEL_BAND);
        let tx = ox as i64 + (w as i64 - text_width(m.label()) as i64).max(0) / 2;
        draw_text(&mut panel, tx, oy as i64 + 2, m.label(), BLACK);
        image::imageops::replace(&mut panel, img, ox as i64, (oy + LABEL_BAND) as i64);
    }
    Ok(panel)
}

const CELL: u32 = 56;

/// Row-normalized confusion grid (rows true, columns predicted) with the
/// count printed in each cell and class indices on both axes.
pub fn confusion_image(cm: &ConfusionMatrix) -> RgbImage {
    let k = cm.n_classes() as u32;
    let names = cm.classes.names();
    let legend_h = (names.len() as u32 + 1) * (GLYPH + 4) + 4;
    let margin = 3 * GLYPH + 8;
    const AXES: &str = "rows true, columns predicted";
    let width = (margin + k * CELL + 8)
        .max(names.iter().map(|n| text_width(n) + 5 * GLYPH).max().unwrap_or(0) + 8)
        .max(text_width(AXES) + 8);
    let height = GLYPH + 8 + k * CELL + legend_h;
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let top = GLYPH + 8;
    for j in 0..k {
        draw_text(
            &mut img,
            (margin + j * CELL + CELL / 2 - GLYPH / 2) as i64,
            2,
            &j.to_string(),
            BLACK,
        );
    }
    for i in 0..k {
        let row_total: u64 = cm.counts[i as usize].iter().sum();
        draw_text(
            &mut img,
            4,
            (top + i * CELL + CELL / 2 - GLYPH / 2) as i64,
            &i.to_string(),
            BLACK,
        );
        for j in 0..k {
            let n = cm.counts[i as usize][j as usize];
            let frac = if row_total == 0 {
                0.0
            } else {
                n as f64 / row_total as f64
            };
            let c = colorous::BLUES.eval_continuous(frac);
            let (x0, y0) = (margin + j * CELL, top + i * CELL);
            fill_rect(&mut img, x0, y0, CELL - 1, CELL - 1, Rgb([c.r, c.g, c.b]));
            let label = n.to_string();
            let ink = if frac > 0.5 { WHITE } else { BLACK };
            let tx = x0 as i64 + (CELL as i64 - text_width(&label) as i64) / 2;
            draw_text(&mut img, tx, (y0 + CELL / 2 - GLYPH / 2) as i64, &label, ink);
        }
    }
    let ly = top + k * CELL + 4;
    for (i, name) in names.iter().enumerate() {
        draw_text(
            &mut img,
            4,
            (ly + (i as u32 + 1) * (GLYPH + 4)) as i64,
            &format!("{i}: {name}"),
            BLACK,
        );
    }
    draw_text(&mut img, 4, ly as i64, AXES, BLACK);
    img
}

/// Colours of the five metric series.
pub const SERIES_COLORS: [[u8; 3]; 5] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
];

/// One drawn bar: pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub model: String,
    pub metric: &'static str,
    pub value: f64,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

pub struct Chart {
    pub image: RgbImage,
    pub bars: Vec<Bar>,
}

const PLOT_H: u32 = 200;
const BAR_W: u32 = 10;
const GROUP_GAP: u32 = 24;

/// Grouped bars: one group per table row (in table order), one bar per
/// metric, values clipped to `[0, 1]`.
pub fn performance_chart(table: &ComparisonTable) -> Result<Chart, ReportError> {
    if table.rows.len() < 2 {
        return Err(ReportError::NoArtifacts(2));
    }
    let left = 5 * GLYPH;
    let top = GLYPH + 8;
    let group_w = (5 * BAR_W).max(text_width("M") * 2);
    let legend_w = TABLE_COLUMNS.iter().map(|c| text_width(c)).max().unwrap_or(0) + 24;
    let n = table.rows.len() as u32;
    let width = left + n * (group_w + GROUP_GAP) + legend_w + 8;
    let height = top + PLOT_H + 3 * GLYPH + 8 + n * (GLYPH + 4);
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let base = top + PLOT_H;
    for t in 0..=4 {
        let y = base - t * PLOT_H / 4;
        fill_rect(&mut img, left, y, n * (group_w + GROUP_GAP), 1, GREY);
        draw_text(
            &mut img,
            0,
            y as i64 - GLYPH as i64 / 2,
            &format!("{:.2}", t as f64 / 4.0),
            BLACK,
        );
    }
    fill_rect(&mut img, left, top, 1, PLOT_H + 1, BLACK);
    let mut bars = Vec::new();
    for (g, row) in table.rows.iter().enumerate() {
        let gx = left + GROUP_GAP / 2 + g as u32 * (group_w + GROUP_GAP);
        for (m, metric) in TABLE_COLUMNS.iter().enumerate() {
            let v = row.values[m].clamp(0.0, 1.0);
            let h = (v * PLOT_H as f64).round() as u32;
            let x = gx + m as u32 * BAR_W;
            let [r, gg, b] = SERIES_COLORS[m];
            fill_rect(&mut img, x, base - h, BAR_W - 1, h, Rgb([r, gg, b]));
            bars.push(Bar {
                model: row.model.clone(),
                metric,
                value: v,
                x,
                y: base - h,
                w: BAR_W - 1,
                h,
            });
        }
        draw_text(&mut img, gx as i64, (base + 4) as i64, &(g + 1).to_string(), BLACK);
        let key = format!("{}: {}", g + 1, row.model);
        draw_text(
            &mut img,
            4,
            (base + 3 * GLYPH + (g as u32) * (GLYPH + 4)) as i64,
            &key,
            BLACK,
        );
    }
    let lx = left + n * (group_w + GROUP_GAP) + 8;
    for (m, metric) in TABLE_COLUMNS.iter().enumerate() {
        let y = top + m as u32 * (GLYPH + 6);
        let [r, g, b] = SERIES_COLORS[m];
        fill_rect(&mut img, lx, y, GLYPH, GLYPH, Rgb([r, g, b]));
        draw_text(&mut img, (lx + GLYPH + 4) as i64, y as i64, metric, BLACK);
    }
    Ok(Chart { image: img, bars })
}

/// PNG bytes; the encoder is deterministic for identical pixels.
pub fn png_bytes<P, C>(img: &image::ImageBuffer<P, C>) -> Result<Vec<u8>, ReportError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ReportError::Render(e.to_string()))?;
    Ok(out.into_inner())
}
