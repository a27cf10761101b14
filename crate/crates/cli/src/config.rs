//! Run configuration: one TOML file, validated before any work starts.

use std::path::{Path, PathBuf};

use camscope::backbones::{Architecture, BackboneSpec, Target};
use camscope::cam::{CamMethod, DEFAULT_SCORE_BATCH};
use camscope::dataset::SyntheticSpec;
use camscope::preprocess::PreprocessConfig;
use camscope::pretrain::PretrainConfig;
use camscope::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory with one subdirectory per class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Generated in memory instead of read from `root`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.05
}

impl SyntheticSection {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            per_class: self.per_class,
            side: self.side,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_conv_layer: Option<String>,
    /// Checkpoint providing feature-extractor weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    /// Seed of the fresh head (and of the backbone when not pretrained).
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelSection {
    pub fn spec(&self) -> BackboneSpec {
        let mut spec = BackboneSpec::new(self.architecture);
        if let Some(side) = self.input_side {
            spec.input_side = side;
        }
        if let Some(layer) = &self.last_conv_layer {
            spec.last_conv_layer = layer.clone();
        }
        spec.pretrained = self.pretrained.clone();
        spec
    }
}

/// Which class each explanation targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetPolicy {
    #[default]
    Predicted,
    True,
}

impl TargetPolicy {
    pub fn resolve(self, true_class: Option<usize>) -> Target {
        match (self, true_class) {
            (TargetPolicy::True, Some(c)) => Target::Class(c),
            _ => Target::Predicted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub methods: Vec<String>,
    pub tap_layer: Option<String>,
    pub target: TargetPolicy,
    pub images_per_class: usize,
    pub score_batch: usize,
    pub alpha: f64,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            methods: CamMethod::ALL.iter().map(|m| m.slug().to_string()).collect(),
            tap_layer: None,
            target: TargetPolicy::Predicted,
            images_per_class: 3,
            score_batch: DEFAULT_SCORE_BATCH,
            alpha: 0.4,
        }
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<CamMethod>, CliError> {
    let mut out = Vec::new();
    for n in names {
        let m: CamMethod = n.parse().map_err(|_| {
            CliError::Usage(format!(
                "unknown CAM method `{n}`; valid methods: {}",
                CamMethod::ALL.map(|m| m.slug()).join(", ")
            ))
        })?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("at least one CAM method is required".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub out_dir: PathBuf,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Parses TOML; syntax and schema errors carry line and column.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {}", origin.display(), e.to_string().trim_end())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` (a run directory's resolved config) or TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let cfg: RunConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml(&text, path)
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        if let Some(s) = &mut self.dataset.synthetic {
            s.seed = seed;
        }
        self.model.init_seed = seed;
        self.train.seed = seed;
        if let Some(a) = &mut self.preprocess.augment {
            a.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        match (&self.dataset.root, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return bad("dataset", "set either `root` or `synthetic`, not both".into()),
            (None, None) => return bad("dataset", "one of `root` or `synthetic` is required".into()),
            (Some(root), None) if !root.is_dir() => {
                return bad(
                    "dataset.root",
                    format!("{} does not exist or is not a directory", root.display()),
                )
            }
            (None, Some(s)) => {
                if let Err(e) = s.spec().validate() {
                    return bad("dataset.synthetic", e.to_string());
                }
            }
            _ => {}
        }
        let f = self.dataset.fractions;
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("dataset.fractions", format!("must be positive and sum to 1, got {f:?}"));
        }
        if let Err(e) = self.preprocess.validate() {
            return bad("preprocess", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        let spec = self.model.spec();
        if spec.input_side < self.model.architecture.min_input_side() {
            return bad(
                "model.input_side",
                format!(
                    "{} needs at least {} pixels",
                    self.model.architecture,
                    self.model.architecture.min_input_side()
                ),
            );
        }
        parse_methods(&self.explain.methods)?;
        if self.explain.score_batch == 0 {
            return bad("explain.score_batch", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            return bad(
                "explain.alpha",
                format!("must be in [0, 1], got {}", self.explain.alpha),
            );
        }
        Ok(())
    }

    /// Checks that `model.pretrained`, when set, names an existing file.
    /// Kept out of `validate` so `pretrain` can run with a config that
    /// points at the checkpoint it is about to write.
    pub fn check_pretrained(&self) -> Result<(), CliError> {
        match &self.model.pretrained {
            Some(p) if !p.is_file() => Err(CliError::Config(format!(
                "model.pretrained: {} does not exist",
                p.display()
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
synthetic = { classes = 3, per_class = 10, side = 64 }

[model]
architecture = "MobileNetV3"
input_side = 64
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("c.toml")).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.dataset.fractions, [0.8, 0.1, 0.1]);
        assert_eq!(cfg.explain.images_per_class, 3);
        assert_eq!(cfg.model.spec().input_side, 64);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_reported_with_their_line() {
        let text = format!("{MINIMAL}\n[train]\nepcohs = 3\n");
        let err = RunConfig::from_toml(&text, Path::new("c.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("epcohs"), "{err}");
        assert!(err.contains("line 10"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let text = MINIMAL.replace("input_side = 64", "input_side = 16");
        let err = RunConfig::from_toml(&text, Path::new("c.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("model.input_side"), "{err}");
        let text = format!("{MINIMAL}\n[explain]\nmethods = [\"lrp\"]\n");
        let err = RunConfig::from_toml(&text, Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("gradcam, gradcampp, layercam, scorecam"));
    }
}
