//! Experiment configuration: a versioned JSON file with strict parsing
//! (unknown keys are rejected; see docs/config.schema.json for the published
//! schema), range validation, CLI overrides and content fingerprints.
//!
//! Two fingerprints are derived from the config. The full fingerprint covers
//! everything that shapes model behavior (seed, preprocessing, split, model,
//! train, inference) and is embedded in checkpoints, predictions and metrics;
//! mixing artifacts with different full fingerprints is refused. The split
//! fingerprint covers only (seed, split) so ablation arms that differ in crop
//! ratio can share one fold assignment. Paths and report options are
//! deliberately outside both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mitoslice::model::sha256_hex;
use mitoslice::preprocess::{AugmentPolicy, CropSpec, NormalizationStats};
use mitoslice::train::TrainConfig;
use mitoslice::Error as CoreError;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the pretrained-weights cache directory.
pub const WEIGHTS_DIR_ENV: &str = "MITOSLICE_WEIGHTS_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is invalid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config validation failed: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub validate_images: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: PathBuf::from("data/synthetic/manifest.csv"),
            validate_images: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub crop: CropSpec,
    pub augment: AugmentPolicy,
    pub normalization: NormalizationStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub k: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: String,
    pub pretrained: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: mitoslice::model::TINY_CNN_ID.to_string(),
            pretrained: false,
        }
    }
}

/// Mirrors the core TrainConfig minus the seed (which lives at the top
/// level so every stage derives from one knob).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub mixed_precision: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let core = TrainConfig::default();
        TrainSection {
            lr_max: core.lr_max,
            lr_min: core.lr_min,
            weight_decay: core.weight_decay,
            batch_size: core.batch_size,
            epochs: core.epochs,
            clip_norm: core.clip_norm,
            mixed_precision: core.mixed_precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub threshold: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub formats: Vec<String>,
    pub converged_only: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            formats: vec!["json".to_string(), "markdown".to_string()],
            converged_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub work_dir: PathBuf,
    pub weights_dir: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            work_dir: PathBuf::from("runs/default"),
            weights_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub inference: InferenceSection,
    pub report: ReportSection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 42,
            data: DataSection::default(),
            preprocess: PreprocessSection::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            inference: InferenceSection::default(),
            report: ReportSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// CLI flags that override file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub work_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub k: Option<usize>,
    pub epochs: Option<usize>,
    pub crop_ratio: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_max: Option<f64>,
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    fn base(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
    }

    /// Load from file (or defaults), apply overrides, validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = Self::base(path)?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &overrides.work_dir {
            cfg.paths.work_dir = dir.clone();
        }
        if let Some(manifest) = &overrides.manifest {
            cfg.data.manifest = manifest.clone();
        }
        if let Some(k) = overrides.k {
            cfg.split.k = k;
        }
        if let Some(epochs) = overrides.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(ratio) = overrides.crop_ratio {
            cfg.preprocess.crop.ratio = ratio;
        }
        if let Some(batch) = overrides.batch_size {
            cfg.train.batch_size = batch;
        }
        if let Some(lr) = overrides.lr_max {
            cfg.train.lr_max = lr;
        }
        if let Some(threshold) = overrides.threshold {
            cfg.inference.threshold = threshold;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: CoreError| ConfigError::Invalid(e.to_string());
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.preprocess.crop.validate().map_err(invalid)?;
        self.preprocess.augment.validate().map_err(invalid)?;
        self.preprocess.normalization.validate().map_err(invalid)?;
        if self.split.k < 2 {
            return Err(ConfigError::Invalid(format!(
                "split.k = {} but at least 2 folds are required",
                self.split.k
            )));
        }
        self.train_config().validate().map_err(invalid)?;
        if !(0.0..=1.0).contains(&self.inference.threshold) {
            return Err(ConfigError::Invalid(format!(
                "inference.threshold = {} outside [0, 1]",
                self.inference.threshold
            )));
        }
        for fmt in &self.report.formats {
            if !matches!(fmt.as_str(), "json" | "markdown" | "csv") {
                return Err(ConfigError::Invalid(format!(
                    "report format {fmt:?} unknown (json|markdown|csv)"
                )));
            }
        }
        mitoslice::model::resolve_backbone(&self.model.backbone, self.model.pretrained)
            .map_err(invalid)?;
        Ok(())
    }

    /// Core training hyperparameters with the root seed attached.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_max: self.train.lr_max,
            lr_min: self.train.lr_min,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            clip_norm: self.train.clip_norm,
            mixed_precision: self.train.mixed_precision,
            seed: self.seed,
        }
    }

    pub fn backbone_spec(&self) -> Result<mitoslice::model::BackboneSpec, CoreError> {
        mitoslice::model::resolve_backbone(&self.model.backbone, self.model.pretrained)
    }

    /// Weights directory: explicit config path, else the env var.
    pub fn weights_dir(&self) -> Option<PathBuf> {
        self.paths
            .weights_dir
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from))
    }

    /// Fingerprint over everything that shapes trained behavior.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            version: u32,
            seed: u64,
            preprocess: &'a PreprocessSection,
            split: &'a SplitSection,
            model: &'a ModelSection,
            train: &'a TrainSection,
            inference: &'a InferenceSection,
        }
        let view = View {
            version: self.version,
            seed: self.seed,
            preprocess: &self.preprocess,
            split: &self.split,
            model: &self.model,
            train: &self.train,
            inference: &self.inference,
        };
        sha256_hex(&serde_json::to_vec(&view).expect("serializable config"))[..16].to_string()
    }

    /// Fingerprint of the fold-assignment inputs only.
    pub fn split_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            version: u32,
            seed: u64,
            split: &'a SplitSection,
        }
        let view = View {
            version: self.version,
            seed: self.seed,
            split: &self.split,
        };
        sha256_hex(&serde_json::to_vec(&view).expect("serializable config"))[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let cfg = ExperimentConfig::load(None, &Overrides::default()).unwrap();
        assert_eq!(cfg.train.lr_max, 1e-4);
        assert_eq!(cfg.train.weight_decay, 1e-6);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.clip_norm, 1000.0);
        assert_eq!(cfg.split.k, 5);
        assert_eq!(cfg.preprocess.crop.ratio, 0.6);
        assert_eq!(cfg.inference.threshold, 0.5);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"version":1,"seed":1,"bogus_key":true}"#).unwrap();
        let err = ExperimentConfig::load(Some(&path), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn range_violations_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"version":1,"preprocess":{"crop":{"ratio":1.5,"output_size":128}}}"#,
        )
        .unwrap();
        assert!(matches!(
            ExperimentConfig::load(Some(&path), &Overrides::default()),
            Err(ConfigError::Invalid(_))
        ));

        std::fs::write(&path, r#"{"version":1,"inference":{"threshold":1.5}}"#).unwrap();
        assert!(ExperimentConfig::load(Some(&path), &Overrides::default()).is_err());

        std::fs::write(&path, r#"{"version":1,"model":{"backbone":"nope"}}"#).unwrap();
        assert!(ExperimentConfig::load(Some(&path), &Overrides::default()).is_err());
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"version":1,"seed":7,"split":{"k":3}}"#).unwrap();
        let cfg = ExperimentConfig::load(
            Some(&path),
            &Overrides {
                seed: Some(99),
                crop_ratio: Some(1.0),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.split.k, 3);
        assert_eq!(cfg.preprocess.crop.ratio, 1.0);
    }

    #[test]
    fn fingerprints_track_the_right_fields() {
        let base = ExperimentConfig::default();
        let mut crop_changed = base.clone();
        crop_changed.preprocess.crop.ratio = 1.0;
        // Crop ratio changes the full fingerprint but not the split one.
        assert_ne!(base.fingerprint(), crop_changed.fingerprint());
        assert_eq!(base.split_fingerprint(), crop_changed.split_fingerprint());

        let mut seed_changed = base.clone();
        seed_changed.seed = 1;
        assert_ne!(base.fingerprint(), seed_changed.fingerprint());
        assert_ne!(base.split_fingerprint(), seed_changed.split_fingerprint());

        let mut path_changed = base.clone();
        path_changed.paths.work_dir = PathBuf::from("elsewhere");
        assert_eq!(base.fingerprint(), path_changed.fingerprint());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ExperimentConfig::load(None, &Overrides::default()).unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
