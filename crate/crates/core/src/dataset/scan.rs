use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::{ClassRegistry, DatasetError, ImageSource, Labeled, LabeledImage};
use crate::image::Image;
use crate::scalar::Scalar;

/// Raster extensions picked up by [`scan_directory`] (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A decodable image on disk and its class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRef {
    /// `class_dir/file_name`, always with `/` separators.
    pub source_id: String,
    pub path: PathBuf,
    pub label: usize,
}

impl Labeled for ImageRef {
    fn source_id(&self) -> &str {
        &self.source_id
    }

    fn label(&self) -> usize {
        self.label
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub root: PathBuf,
    pub registry: ClassRegistry,
    pub items: Vec<ImageRef>,
    pub skipped: Vec<SkippedFile>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Lists `root/<class>/<image>` files. Classes are the sorted immediate
/// subdirectories; undecodable images are skipped and reported.
pub fn scan_directory(root: impl AsRef<Path>) -> Result<ScanReport, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(DatasetError::EmptyRoot(root.to_path_buf()));
    }
    let names: Vec<String> = class_dirs
        .iter()
        .map(|p| {
            p.file_name()
                .expect("directory entry has a name")
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let registry = ClassRegistry::new(names.clone())?;
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (label, (dir, class)) in class_dirs.iter().zip(&names).enumerate() {
        let before = items.len();
        for path in sorted_entries(dir)? {
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            match image::open(&path) {
                Ok(_) => {
                    let file = path.file_name().expect("file entry has a name").to_string_lossy();
                    items.push(ImageRef {
                        source_id: format!("{class}/{file}"),
                        path,
                        label,
                    });
                }
                Err(e) => {
                    warn!("skipping undecodable image {}: {e}", path.display());
                    skipped.push(SkippedFile {
                        path,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if items.len() == before {
            return Err(DatasetError::EmptyClass(class.clone()));
        }
    }
    Ok(ScanReport {
        root: root.to_path_buf(),
        registry,
        items,
        skipped,
    })
}

/// Decodes an image as 3-channel intensities in `[0, 255]`; grayscale
/// sources are replicated across channels.
pub fn load_image<T: Scalar>(r: &ImageRef) -> Result<LabeledImage<T>, DatasetError> {
    let img = image::open(&r.path).map_err(|e| DatasetError::Decode {
        path: r.path.clone(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect();
    Ok(LabeledImage::new(
        Image::new(h as usize, w as usize, 3, data),
        r.label,
        r.source_id.clone(),
    ))
}

/// Lazily decoding [`ImageSource`] over a scanned directory.
#[derive(Clone, Debug)]
pub struct DirectorySource {
    report: ScanReport,
    index: HashMap<String, usize>,
}

impl DirectorySource {
    pub fn new(report: ScanReport) -> Self {
        let index = report
            .items
            .iter()
            .enumerate()
            .map(|(i, r)| (r.source_id.clone(), i))
            .collect();
        Self { report, index }
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Ok(Self::new(scan_directory(root)?))
    }

    pub fn report(&self) -> &ScanReport {
        &self.report
    }
}

impl<T: Scalar> ImageSource<T> for DirectorySource {
    fn registry(&self) -> &ClassRegistry {
        &self.report.registry
    }

    fn items(&self) -> Vec<(String, usize)> {
        self.report
            .items
            .iter()
            .map(|r| (r.source_id.clone(), r.label))
            .collect()
    }

    fn load(&self, id: &str) -> Result<LabeledImage<T>, DatasetError> {
        let i = self
            .index
            .get(id)
            .ok_or_else(|| DatasetError::UnknownItem(id.to_string()))?;
        load_image(&self.report.items[*i])
    }
}
