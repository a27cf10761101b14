//! Directory-of-classes ingestion, deterministic stratified splits, and a
//! synthetic shape dataset.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::scalar::Scalar;

mod corpus;
mod scan;
mod split;
mod synthetic;

pub use corpus::{generate_corpus, CORPUS_CLASSES};
pub use scan::{load_image, scan_directory, DirectorySource, ImageRef, ScanReport, SkippedFile, IMAGE_EXTENSIONS};
pub use split::{stratified_split, DatasetSplit, SplitPart};
pub use synthetic::{generate_synthetic, BoundingBox, Primitive, SyntheticDataset, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("dataset root {0} contains no class directories")]
    EmptyRoot(PathBuf),
    #[error("class directory `{0}` contains no decodable images")]
    EmptyClass(String),
    #[error("class `{class}` has {count} items; at least 3 are needed to split")]
    TooFewItems { class: String, count: usize },
    #[error("invalid split fractions {0:?}: each must be positive and they must sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("invalid class registry: {0}")]
    InvalidRegistry(String),
    #[error("invalid synthetic dataset request: {0}")]
    InvalidSynthetic(String),
    #[error("label {label} of `{id}` is outside the {n_classes}-class registry")]
    LabelOutOfRange { id: String, label: usize, n_classes: usize },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered class names; a class index is a position in this list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassRegistry {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        if names.is_empty() {
            return Err(DatasetError::InvalidRegistry("no classes".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(DatasetError::InvalidRegistry("empty class name".into()));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(DatasetError::InvalidRegistry(format!("duplicate class `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl TryFrom<Vec<String>> for ClassRegistry {
    type Error = DatasetError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(names)
    }
}

impl From<ClassRegistry> for Vec<String> {
    fn from(r: ClassRegistry) -> Self {
        r.names
    }
}

/// Anything carrying a stable identifier and a class index.
pub trait Labeled {
    fn source_id(&self) -> &str;
    fn label(&self) -> usize;
}

/// Decoded pixels (`H x W x C`, intensities as stored) with class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub pixels: Image<T>,
    pub label: usize,
    pub source_id: String,
}

impl<T: Scalar> LabeledImage<T> {
    pub fn new(pixels: Image<T>, label: usize, source_id: impl Into<String>) -> Self {
        Self {
            pixels,
            label,
            source_id: source_id.into(),
        }
    }

    /// Same label and id, new pixels.
    pub fn with_pixels(&self, pixels: Image<T>) -> Self {
        Self {
            pixels,
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }
}

impl<T> Labeled for LabeledImage<T> {
    fn source_id(&self) -> &str {
        &self.source_id
    }

    fn label(&self) -> usize {
        self.label
    }
}

/// Random access to a dataset's images by source id.
pub trait ImageSource<T: Scalar>: Sync {
    fn registry(&self) -> &ClassRegistry;

    /// `(source_id, label)` of every item, in a deterministic order.
    fn items(&self) -> Vec<(String, usize)>;

    fn load(&self, id: &str) -> Result<LabeledImage<T>, DatasetError>;
}

/// Images held in memory (synthetic data, tests).
#[derive(Clone, Debug)]
pub struct MemorySource<T> {
    registry: ClassRegistry,
    images: Vec<LabeledImage<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> MemorySource<T> {
    pub fn new(registry: ClassRegistry, images: Vec<LabeledImage<T>>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.label >= registry.len() {
                return Err(DatasetError::LabelOutOfRange {
                    id: img.source_id.clone(),
                    label: img.label,
                    n_classes: registry.len(),
                });
            }
            index.insert(img.source_id.clone(), i);
        }
        Ok(Self {
            registry,
            images,
            index,
        })
    }

    pub fn images(&self) -> &[LabeledImage<T>] {
        &self.images
    }
}

impl<T: Scalar> ImageSource<T> for MemorySource<T> {
    fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    fn items(&self) -> Vec<(String, usize)> {
        self.images.iter().map(|i| (i.source_id.clone(), i.label)).collect()
    }

    fn load(&self, id: &str) -> Result<LabeledImage<T>, DatasetError> {
        self.index
            .get(id)
            .map(|&i| self.images[i].clone())
            .ok_or_else(|| DatasetError::UnknownItem(id.to_string()))
    }
}

impl Labeled for (String, usize) {
    fn source_id(&self) -> &str {
        &self.0
    }

    fn label(&self) -> usize {
        self.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_duplicates_and_empties() {
        assert!(ClassRegistry::new(vec![]).is_err());
        assert!(ClassRegistry::new(vec!["a".into(), "a".into()]).is_err());
        assert!(ClassRegistry::new(vec!["".into()]).is_err());
        let r = ClassRegistry::new(vec!["glioma".into(), "menin".into()]).unwrap();
        assert_eq!(r.index_of("menin"), Some(1));
        assert_eq!(r.name(0), Some("glioma"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"["glioma","menin"]"#);
        let back: ClassRegistry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
