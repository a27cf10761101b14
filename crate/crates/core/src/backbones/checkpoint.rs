//! Safetensors checkpoints carrying weights, BN statistics and enough
//! metadata to rebuild the classifier.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{build, BackboneSpec, ClassifierModel, ModelError};
use crate::dataset::ClassRegistry;
use crate::nn::Param;
use crate::preprocess::PreprocessConfig;
use crate::scalar::Scalar;

const META_KEY: &str = "camscope";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed besides the tensors to reuse a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub backbone: BackboneSpec,
    pub classes: ClassRegistry,
    pub preprocess: PreprocessConfig,
    /// Epoch (0-based) whose weights were saved.
    pub epoch: usize,
}

impl CheckpointMeta {
    pub fn new(backbone: BackboneSpec, classes: ClassRegistry, preprocess: PreprocessConfig, epoch: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            backbone,
            classes,
            preprocess,
            epoch,
        }
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes every parameter and buffer of `model` with `meta` to `path`.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ClassifierModel<T>,
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    if meta.classes.len() != model.n_classes() {
        return Err(ckpt_err(
            path,
            format!(
                "registry has {} classes but model has {}",
                meta.classes.len(),
                model.n_classes()
            ),
        ));
    }
    let state = model.network().state();
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = state
        .iter()
        .map(|p| (p.name.clone(), T::to_le_bytes_vec(&p.value), p.shape.clone()))
        .collect();
    let views = bytes
        .iter()
        .map(|(name, b, shape)| {
            TensorView::new(T::DTYPE, shape.clone(), b)
                .map(|v| (name.as_str(), v))
                .map_err(|e| ckpt_err(path, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let json = serde_json::to_string(meta).expect("checkpoint metadata serializes");
    let info = HashMap::from([(META_KEY.to_string(), json)]);
    let out = safetensors::serialize(views, Some(info)).map_err(|e| ckpt_err(path, e.to_string()))?;
    fs::write(path, out)?;
    Ok(())
}

fn read_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta, ModelError> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| ckpt_err(path, e.to_string()))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| ckpt_err(path, "missing model metadata"))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| ckpt_err(path, format!("bad metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    Ok(meta)
}

fn decode<T: Scalar>(path: &Path, name: &str, view: &TensorView<'_>) -> Result<Vec<T>, ModelError> {
    let data = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(f32::from_le_bytes_slice(data)
            .into_iter()
            .map(|v| T::from_f64_lossy(f64::from(v)))
            .collect()),
        Dtype::F64 => Ok(f64::from_le_bytes_slice(data)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect()),
        other => Err(ckpt_err(
            path,
            format!("tensor `{name}` has unsupported dtype {other:?}"),
        )),
    }
}

/// Copies tensors into `params` by name; `required` selects which must be present.
fn copy_into<T: Scalar>(
    path: &Path,
    tensors: &SafeTensors<'_>,
    params: Vec<&mut Param<T>>,
    required: impl Fn(&str) -> bool,
) -> Result<usize, ModelError> {
    let mut copied = 0;
    for p in params {
        if !required(&p.name) {
            continue;
        }
        let view = tensors
            .tensor(&p.name)
            .map_err(|_| ckpt_err(path, format!("missing tensor `{}`", p.name)))?;
        if view.shape() != p.shape.as_slice() {
            return Err(ckpt_err(
                path,
                format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    view.shape(),
                    p.shape
                ),
            ));
        }
        p.value = decode(path, &p.name, &view)?;
        copied += 1;
    }
    Ok(copied)
}

/// Rebuilds the classifier described by the checkpoint and restores its state.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ClassifierModel<T>, CheckpointMeta), ModelError> {
    let bytes = fs::read(path)?;
    let meta = read_meta(path, &bytes)?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e.to_string()))?;
    let spec = BackboneSpec {
        pretrained: None,
        ..meta.backbone.clone()
    };
    let mut model = build::<T>(&spec, meta.classes.len(), 0)?;
    model.spec = Some(meta.backbone.clone());
    let expected = model.network().state().len();
    if tensors.len() != expected {
        return Err(ckpt_err(
            path,
            format!("holds {} tensors, model has {expected}", tensors.len()),
        ));
    }
    copy_into(path, &tensors, model.network_mut().state_mut(), |_| true)?;
    Ok((model, meta))
}

/// Initialises every non-head parameter and buffer of `model` from the
/// checkpoint at `path`; the classification head keeps its fresh weights.
pub fn load_backbone_weights<T: Scalar>(path: &Path, model: &mut ClassifierModel<T>) -> Result<usize, ModelError> {
    let bytes = fs::read(path)?;
    let meta = read_meta(path, &bytes)?;
    let ours = model.spec().map(|s| s.architecture);
    if ours.is_some() && ours != Some(meta.backbone.architecture) {
        return Err(ckpt_err(
            path,
            format!(
                "weights are for {}, model is {}",
                meta.backbone.architecture,
                model.label()
            ),
        ));
    }
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e.to_string()))?;
    copy_into(path, &tensors, model.network_mut().state_mut(), |n| {
        !ClassifierModel::<T>::is_head_param(n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::Architecture;
    use crate::image::Image;

    fn meta(n: usize, side: usize) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            backbone: BackboneSpec::new(Architecture::MobileNetV3).with_input_side(side),
            classes: ClassRegistry::new((0..n).map(|i| format!("k{i}")).collect()).unwrap(),
            preprocess: PreprocessConfig::default(),
            epoch: 3,
        }
    }

    #[test]
    fn roundtrip_restores_identical_logits() {
        let m = meta(3, 40);
        let model = build::<f32>(&m.backbone, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint");
        save_checkpoint(&path, &model, &m).unwrap();
        let (back, meta_back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(meta_back, m);
        let img = Image::from_fn(40, 40, 3, |y, x, c| ((y * 3 + x + c) % 11) as f32 / 10.0);
        assert_eq!(model.predict(&[&img]), back.predict(&[&img]));

        // Cross-precision load goes through f64 exactly for f32 data.
        let (wide, _) = load_checkpoint::<f64>(&path).unwrap();
        let a = model.network().state()[0].value[0];
        assert_eq!(wide.network().state()[0].value[0], f64::from(a));
    }

    #[test]
    fn backbone_transfer_keeps_fresh_head() {
        let m = meta(3, 40);
        let source = build::<f32>(&m.backbone, 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pre.safetensors");
        save_checkpoint(&path, &source, &m).unwrap();

        let spec = BackboneSpec {
            pretrained: Some(path.clone()),
            ..m.backbone.clone()
        };
        let target = build::<f32>(&spec, 4, 2).unwrap();
        let fresh = build::<f32>(&m.backbone, 4, 2).unwrap();
        for ((s, t), f) in source
            .network()
            .state()
            .iter()
            .zip(target.network().state())
            .zip(fresh.network().state())
        {
            if ClassifierModel::<f32>::is_head_param(&t.name) {
                assert_eq!(t.value, f.value, "{}", t.name);
            } else {
                assert_eq!(s.value, t.value, "{}", t.name);
            }
        }
    }

    #[test]
    fn corrupt_and_mismatched_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk");
        fs::write(&junk, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&junk),
            Err(ModelError::Checkpoint { .. })
        ));

        let m = meta(2, 40);
        let model = build::<f32>(&m.backbone, 2, 0).unwrap();
        assert!(save_checkpoint(&dir.path().join("x"), &model, &meta(3, 40)).is_err());

        let path = dir.path().join("ok");
        save_checkpoint(&path, &model, &m).unwrap();
        let mut other = build::<f32>(&BackboneSpec::new(Architecture::ResNet50).with_input_side(40), 2, 0).unwrap();
        assert!(load_backbone_weights(&path, &mut other).is_err());
    }
}
