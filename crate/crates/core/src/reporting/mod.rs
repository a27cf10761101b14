//! Run-directory layout, per-run artifacts, comparison tables and image
//! outputs (heatmaps, overlays, panels, confusion grids, charts).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::{CamMethod, Heatmap};
use crate::metrics::MetricsReport;
use crate::scalar::Scalar;
use crate::training::TrainLog;

mod render;
mod table;

pub use render::{
    confusion_image, draw_text, explanation_panel, heatmap_to_gray, image_to_rgb, performance_chart, png_bytes, Bar,
    Chart, LABEL_BAND, PANEL_ORDER, SERIES_COLORS,
};
pub use table::{comparison_table, round_half_even, ComparisonRow, ComparisonTable, TABLE_COLUMNS, TABLE_PLACES};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least {0} run artifact(s)")]
    NoArtifacts(usize),
    #[error("panel needs every method; {0} is missing")]
    MissingMethod(CamMethod),
    #[error("{0}")]
    Render(String),
    #[error("malformed run directory {dir}: {reason}")]
    MalformedRun { dir: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths inside `runs/<run_id>/`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn trainlog(&self) -> PathBuf {
        self.root.join("trainlog.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn confusion_csv(&self) -> PathBuf {
        self.root.join("confusion.csv")
    }

    pub fn confusion_png(&self) -> PathBuf {
        self.root.join("confusion.png")
    }

    pub fn explanations(&self) -> PathBuf {
        self.root.join("explanations")
    }

    pub fn explanation_dir(&self, image_id: &str) -> PathBuf {
        self.explanations().join(image_id)
    }

    pub fn heatmap(&self, image_id: &str, method: CamMethod) -> PathBuf {
        self.explanation_dir(image_id).join(format!("{}.png", method.slug()))
    }

    pub fn overlay(&self, image_id: &str, method: CamMethod) -> PathBuf {
        self.explanation_dir(image_id)
            .join(format!("{}_overlay.png", method.slug()))
    }

    pub fn sidecar(&self, image_id: &str, method: CamMethod) -> PathBuf {
        self.explanation_dir(image_id).join(format!("{}.json", method.slug()))
    }

    pub fn panel(&self, image_id: &str) -> PathBuf {
        self.root.join(format!("panel_{image_id}.png"))
    }

    pub fn comparison_csv(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }

    pub fn comparison_txt(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }

    pub fn chart(&self) -> PathBuf {
        self.root.join("chart.png")
    }
}

/// File-system-safe image id for a source id (`class/file.png` becomes
/// `class__file`).
pub fn image_id(source_id: &str) -> String {
    let stem = source_id.rsplit_once('.').map_or(source_id, |(s, _)| s);
    let mut out = String::with_capacity(stem.len() + 2);
    for c in stem.chars() {
        match c {
            '/' | '\\' => out.push_str("__"),
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' => out.push(c),
            _ => out.push('-'),
        }
    }
    out
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model: String,
    pub split: String,
    pub n_items: usize,
    pub report: MetricsReport,
}

/// Saved heatmap/overlay pair for one (image, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub image_id: String,
    pub source_id: String,
    pub method: CamMethod,
    pub heatmap: PathBuf,
    pub overlay: PathBuf,
}

/// JSON sidecar stored next to each heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub source_id: String,
    pub method: CamMethod,
    pub method_label: String,
    pub tap_layer: String,
    pub target_class: usize,
    pub target_name: Option<String>,
    pub true_class: Option<usize>,
    pub side: usize,
    pub normalization: String,
    pub overlay_alpha: f64,
    pub colormap: String,
}

pub const NORMALIZATION: &str = "bilinear upsample, then (v - min) / (max - min); constant map -> 0";

/// Everything one finished run contributes to a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifact {
    pub model: String,
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: MetricsReport,
    pub train_log: TrainLog,
    pub explanations: Vec<ExplanationRecord>,
}

impl RunArtifact {
    /// Reads a run directory produced by training and evaluation.
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let layout = RunLayout::new(dir);
        let bad = |reason: String| ReportError::MalformedRun {
            dir: dir.to_path_buf(),
            reason,
        };
        if !dir.is_dir() {
            return Err(bad("not a directory".into()));
        }
        for required in [layout.metrics(), layout.trainlog(), layout.checkpoint()] {
            if !required.is_file() {
                return Err(bad(format!(
                    "missing {}",
                    required.file_name().unwrap().to_string_lossy()
                )));
            }
        }
        let text = fs::read_to_string(layout.metrics()).map_err(io_err(&layout.metrics()))?;
        let metrics: RunMetrics = serde_json::from_str(&text).map_err(|e| bad(format!("metrics.json: {e}")))?;
        let text = fs::read_to_string(layout.trainlog()).map_err(io_err(&layout.trainlog()))?;
        let train_log = TrainLog::from_jsonl(&text).map_err(|e| bad(format!("trainlog.jsonl: {e}")))?;
        let mut explanations = Vec::new();
        if layout.explanations().is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(layout.explanations())
                .map_err(io_err(&layout.explanations()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for d in dirs {
                let id = d.file_name().unwrap().to_string_lossy().to_string();
                for m in CamMethod::ALL {
                    let sidecar = layout.sidecar(&id, m);
                    if !sidecar.is_file() {
                        continue;
                    }
                    let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
                    let meta: HeatmapSidecar = serde_json::from_str(&text).map_err(|source| ReportError::Json {
                        path: sidecar.clone(),
                        source,
                    })?;
                    explanations.push(ExplanationRecord {
                        image_id: id.clone(),
                        source_id: meta.source_id,
                        method: m,
                        heatmap: layout.heatmap(&id, m),
                        overlay: layout.overlay(&id, m),
                    });
                }
            }
        }
        let artifact = Self {
            model: metrics.model,
            run_dir: dir.to_path_buf(),
            checkpoint: layout.checkpoint(),
            metrics: metrics.report,
            train_log,
            explanations,
        };
        artifact.check_files()?;
        Ok(artifact)
    }

    /// Every referenced file exists.
    pub fn check_files(&self) -> Result<(), ReportError> {
        let paths =
            std::iter::once(&self.checkpoint).chain(self.explanations.iter().flat_map(|e| [&e.heatmap, &e.overlay]));
        for p in paths {
            if !p.is_file() {
                return Err(ReportError::MalformedRun {
                    dir: self.run_dir.clone(),
                    reason: format!("missing {}", p.display()),
                });
            }
        }
        Ok(())
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Writes the heatmap, overlay and sidecar of one explanation.
pub fn write_explanation<T: Scalar>(
    layout: &RunLayout,
    sidecar: &HeatmapSidecar,
    map: &Heatmap<T>,
    overlay: &crate::image::Image<T>,
) -> Result<ExplanationRecord, ReportError> {
    let id = image_id(&sidecar.source_id);
    let record = ExplanationRecord {
        image_id: id.clone(),
        source_id: sidecar.source_id.clone(),
        method: map.method,
        heatmap: layout.heatmap(&id, map.method),
        overlay: layout.overlay(&id, map.method),
    };
    write_bytes(&record.heatmap, &png_bytes(&heatmap_to_gray(map)?)?)?;
    write_bytes(&record.overlay, &png_bytes(&image_to_rgb(overlay))?)?;
    write_json(&layout.sidecar(&id, map.method), sidecar)?;
    Ok(record)
}
