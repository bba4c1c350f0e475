//! Single-file checkpoint archive: parameters, backbone graph, crop spec and
//! training metadata, versioned and protected by a sha256 checksum.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    sha256_hex, BackboneSpec, ClassifierModel, LayerSpec, ParamEntry, SequentialCnn,
};
use crate::preprocess::CropSpec;
use crate::train::CheckpointMeta;

pub const CHECKPOINT_FORMAT: &str = "mitoslice-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    backbone: BackboneSpec,
    input_channels: usize,
    graph: Vec<LayerSpec>,
    crop: CropSpec,
    params: Vec<ParamEntry>,
    checksum: String,
}

#[derive(Serialize)]
struct Payload<'a> {
    format: &'a str,
    version: u32,
    meta: &'a CheckpointMeta,
    backbone: &'a BackboneSpec,
    input_channels: usize,
    graph: &'a [LayerSpec],
    crop: &'a CropSpec,
    params: &'a [ParamEntry],
}

fn compute_checksum(file: &CheckpointFile) -> String {
    let payload = Payload {
        format: &file.format,
        version: file.version,
        meta: &file.meta,
        backbone: &file.backbone,
        input_channels: file.input_channels,
        graph: &file.graph,
        crop: &file.crop,
        params: &file.params,
    };
    sha256_hex(&serde_json::to_vec(&payload).expect("serializable payload"))
}

/// A checkpoint read back from disk, with the model reconstructed from the
/// embedded graph (no registry or weights directory needed).
pub struct LoadedCheckpoint {
    pub path: PathBuf,
    pub meta: CheckpointMeta,
    pub crop: CropSpec,
    pub model: ClassifierModel,
}

pub fn save_checkpoint(
    path: &Path,
    model: &ClassifierModel,
    crop: &CropSpec,
    meta: &CheckpointMeta,
) -> Result<()> {
    let params: Vec<ParamEntry> = model
        .named_params()
        .into_iter()
        .map(|(name, shape, values)| ParamEntry::from_values(&name, &shape, &values))
        .collect();
    let mut file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        meta: meta.clone(),
        backbone: model.spec.clone(),
        input_channels: model.backbone.input_channels,
        graph: model.backbone.specs(),
        crop: *crop,
        params,
        checksum: String::new(),
    };
    file.checksum = compute_checksum(&file);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::InvalidArgument(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::CheckpointCorrupt {
        path: path.to_path_buf(),
        reason: format!("parse error: {e}"),
    })?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: format!("unsupported format {}/{}", file.format, file.version),
        });
    }
    let expected = compute_checksum(&file);
    if expected != file.checksum {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: "checksum mismatch".into(),
        });
    }
    let cnn = SequentialCnn::from_specs(&file.graph, file.input_channels)?;
    if cnn.feature_dim != file.backbone.feature_dim {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: format!(
                "graph yields {} features, spec declares {}",
                cnn.feature_dim, file.backbone.feature_dim
            ),
        });
    }
    let mut model = ClassifierModel::from_parts(cnn, file.backbone);
    model.set_named_params(&file.params)?;
    Ok(LoadedCheckpoint {
        path: path.to_path_buf(),
        meta: file.meta,
        crop: file.crop,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, resolve_backbone};
    use crate::rng::derive_rng;
    use crate::train::{CheckpointMeta, EpochMetrics, FoldValMetrics};
    use ndarray::Array4;

    fn sample_meta() -> CheckpointMeta {
        CheckpointMeta {
            fold: 2,
            best_epoch: 1,
            best_val_loss: 0.42,
            val_metrics_per_epoch: vec![EpochMetrics {
                epoch: 1,
                lr: 1e-4,
                train_loss: 0.6,
                val_loss: 0.42,
                val_balanced_accuracy: Some(0.8),
                val_converged: true,
            }],
            best_val_metrics: FoldValMetrics {
                n: 10,
                roc_auc: Some(0.9),
                accuracy: Some(0.8),
                sensitivity: Some(0.7),
                specificity: Some(0.9),
                balanced_accuracy: Some(0.8),
                converged: true,
            },
            config_fingerprint: "abc123".into(),
            seed: 42,
        }
    }

    #[test]
    fn roundtrip_restores_model_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let spec = resolve_backbone("tiny-cnn-test", false).unwrap();
        let model = build_model(&spec, None, &mut derive_rng(4, "init")).unwrap();
        let crop = CropSpec::default();
        let meta = sample_meta();
        let path = dir.path().join("fold_2.ckpt.json");
        save_checkpoint(&path, &model, &crop, &meta).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta, meta);
        assert_eq!(loaded.crop, crop);
        let mut rng = derive_rng(5, "x");
        use rand::Rng;
        let x = Array4::from_shape_fn((2, 3, 128, 128), |_| rng.random_range(-1.0..1.0f32));
        assert_eq!(model.forward(&x).unwrap(), loaded.model.forward(&x).unwrap());
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = resolve_backbone("tiny-cnn-test", false).unwrap();
        let model = build_model(&spec, None, &mut derive_rng(4, "init")).unwrap();
        let meta = sample_meta();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_checkpoint(&a, &model, &CropSpec::default(), &meta).unwrap();
        save_checkpoint(&b, &model, &CropSpec::default(), &meta).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = resolve_backbone("tiny-cnn-test", false).unwrap();
        let model = build_model(&spec, None, &mut derive_rng(4, "init")).unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&path, &model, &CropSpec::default(), &sample_meta()).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replace("\"best_val_loss\": 0.42", "\"best_val_loss\": 0.1");
        assert_ne!(text, tampered);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }
}
