//! Per-fold training: Adam with a per-epoch cosine schedule, global-norm
//! gradient clipping, optional reduced-precision execution with dynamic loss
//! scaling, per-epoch validation and best-validation-loss checkpointing.

mod adam;
mod amp;

pub use adam::Adam;
pub use amp::GradScaler;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{s, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data_model::{load_sample_image, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::{balanced_accuracy, basic_rates, confusion, detect_non_convergence, roc_auc};
use crate::model::{
    bce_with_logits, bce_with_logits_grad, build_model, sigmoid, BackboneSpec, ClassifierModel,
};
use crate::preprocess::{
    image_to_float, preprocess_eval, preprocess_train, AugmentPolicy, CropSpec, FloatImage,
    NormalizationStats,
};
use crate::rng::derive_rng;
use crate::splits::{fold_split, FoldAssignment};

/// Optimization hyperparameters. Defaults follow the training recipe:
/// Adam at 1e-4 with 1e-6 weight decay, batch 64, cosine annealing over
/// 5 epochs, gradient clipping at norm 1000.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub mixed_precision: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-6,
            batch_size: 64,
            epochs: 5,
            clip_norm: 1000.0,
            mixed_precision: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_max.is_nan() || self.lr_max <= 0.0 || self.lr_min < 0.0 || self.lr_min > self.lr_max
        {
            return Err(Error::InvalidArgument(format!(
                "learning rates lr_max={} lr_min={} invalid",
                self.lr_max, self.lr_min
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::InvalidArgument("clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// Validation numbers recorded for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: Option<f64>,
    pub val_converged: bool,
}

/// Full validation metrics of the checkpointed (best) epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldValMetrics {
    pub n: usize,
    pub roc_auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub converged: bool,
}

/// Per-fold training record persisted inside the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub fold: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_metrics_per_epoch: Vec<EpochMetrics>,
    pub best_val_metrics: FoldValMetrics,
    pub config_fingerprint: String,
    pub seed: u64,
}

/// Cosine annealing: lr = lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T)).
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs T > 0".into()));
    }
    if t > total {
        return Err(Error::InvalidArgument(format!(
            "schedule step {t} beyond total {total}"
        )));
    }
    let progress = t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipReport {
    pub pre_norm: f64,
    pub clipped: bool,
}

/// Scale all gradients by max_norm/||g|| when the global L2 norm exceeds
/// max_norm; direction is preserved exactly. Non-finite gradients abort.
pub fn clip_gradients(grads: &mut [Vec<f32>], max_norm: f64) -> Result<ClipReport> {
    let mut sum_sq = 0.0f64;
    for (i, tensor) in grads.iter().enumerate() {
        for &g in tensor {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    context: format!("tensor {i}"),
                });
            }
            sum_sq += f64::from(g) * f64::from(g);
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for tensor in grads.iter_mut() {
            for g in tensor.iter_mut() {
                *g *= scale;
            }
        }
        Ok(ClipReport {
            pre_norm: norm,
            clipped: true,
        })
    } else {
        Ok(ClipReport {
            pre_norm: norm,
            clipped: false,
        })
    }
}

/// Earliest index of the minimum (ties keep the first occurrence), 1-based.
pub fn best_epoch_by_val_loss(losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in losses.iter().enumerate() {
        if best.is_none_or(|(_, bl)| l < bl) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Mean BCE loss and per-sample probabilities on a validation set.
/// No augmentation is applied.
pub fn validate(
    model: &ClassifierModel,
    images: &[FloatImage],
    labels: &[u8],
    crop: &CropSpec,
    norm: &NormalizationStats,
    batch_size: usize,
) -> Result<(f64, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if images.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: images.len(),
            right: labels.len(),
        });
    }
    let size = crop.output_size;
    let mut probs = Vec::with_capacity(images.len());
    let mut loss_sum = 0.0f64;
    let mut offset = 0;
    while offset < images.len() {
        let end = (offset + batch_size).min(images.len());
        let mut x = Array4::<f32>::zeros((end - offset, 3, size, size));
        for (bi, img) in images[offset..end].iter().enumerate() {
            let input = preprocess_eval(img, crop, norm)?;
            x.slice_mut(s![bi, .., .., ..]).assign(&input);
        }
        let logits = model.forward(&x)?;
        let logits_f64: Vec<f64> = logits.iter().map(|&z| f64::from(z)).collect();
        let targets: Vec<f64> = labels[offset..end].iter().map(|&l| f64::from(l)).collect();
        let batch_loss = bce_with_logits(&logits_f64, &targets)?;
        loss_sum += batch_loss * (end - offset) as f64;
        probs.extend(logits_f64.iter().map(|&z| sigmoid(z)));
        offset = end;
    }
    Ok((loss_sum / images.len() as f64, probs))
}

/// Everything one fold run needs.
pub struct FoldRunSetup<'a> {
    pub manifest: &'a DatasetManifest,
    pub assignment: &'a FoldAssignment,
    pub fold: usize,
    pub backbone: &'a BackboneSpec,
    pub weights_dir: Option<&'a Path>,
    pub crop: CropSpec,
    pub augment: AugmentPolicy,
    pub norm: NormalizationStats,
    pub config: &'a TrainConfig,
    pub config_fingerprint: String,
    /// Checkpoint destination; skipped when absent.
    pub checkpoint_path: Option<PathBuf>,
    /// JSON-lines training log destination; skipped when absent.
    pub log_path: Option<PathBuf>,
}

fn gather_fold_images(
    manifest: &DatasetManifest,
    ids: &[String],
) -> Result<(Vec<RgbImage>, Vec<u8>)> {
    let by_id: HashMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    let mut images = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let &idx = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MissingAssignment {
                sample_id: id.clone(),
            })?;
        let record = &manifest.records[idx];
        images.push(load_sample_image(&manifest.image_path(record))?);
        labels.push(record.label);
    }
    Ok((images, labels))
}

fn unix_timestamp() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Train one fold with the standard validation evaluator, persisting the
/// best-epoch checkpoint and the per-epoch log.
pub fn train_fold(setup: &FoldRunSetup) -> Result<CheckpointMeta> {
    let (_, val_ids) = fold_split(setup.manifest, setup.assignment, setup.fold)?;
    if val_ids.is_empty() {
        return Err(Error::EmptySplit {
            side: "validation",
            fold: setup.fold,
        });
    }
    let (val_images_u8, val_labels) = gather_fold_images(setup.manifest, &val_ids)?;
    let val_images: Vec<FloatImage> = val_images_u8.iter().map(image_to_float).collect();
    let crop = setup.crop;
    let norm = setup.norm;
    let batch_size = setup.config.batch_size;
    train_fold_with_evaluator(setup, move |model, _epoch| {
        let (loss, probs) = validate(model, &val_images, &val_labels, &crop, &norm, batch_size)?;
        Ok((loss, probs, val_labels.clone()))
    })
}

/// Training loop with an injectable validation evaluator (the seam the
/// checkpoint-selection tests use). The evaluator is called exactly once per
/// epoch and returns (mean loss, probabilities, true labels).
pub(crate) fn train_fold_with_evaluator<F>(
    setup: &FoldRunSetup,
    mut evaluator: F,
) -> Result<CheckpointMeta>
where
    F: FnMut(&ClassifierModel, usize) -> Result<(f64, Vec<f64>, Vec<u8>)>,
{
    setup.config.validate()?;
    crop_and_policy_checks(setup)?;
    let cfg = setup.config;
    let fold = setup.fold;
    let (train_ids, val_ids) = fold_split(setup.manifest, setup.assignment, fold)?;
    if train_ids.is_empty() {
        return Err(Error::EmptySplit {
            side: "train",
            fold,
        });
    }
    if val_ids.is_empty() {
        return Err(Error::EmptySplit {
            side: "validation",
            fold,
        });
    }
    let (train_images, train_labels) = gather_fold_images(setup.manifest, &train_ids)?;
    let train_floats: Vec<FloatImage> = train_images.iter().map(image_to_float).collect();

    let mut model = build_model(
        setup.backbone,
        setup.weights_dir,
        &mut derive_rng(cfg.seed, &format!("init/fold{fold}")),
    )?;
    let shapes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut scaler = cfg.mixed_precision.then(GradScaler::default);

    let mut log_file = match &setup.log_path {
        Some(path) => Some(std::fs::File::create(path).map_err(|e| Error::io(path, e))?),
        None => None,
    };

    let size = crop_size(setup);
    struct Best {
        val_loss: f64,
        epoch: usize,
        params: Vec<Vec<f32>>,
        probs: Vec<f64>,
        labels: Vec<u8>,
    }
    let mut best: Option<Best> = None;
    let mut epoch_rows = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        let mut order: Vec<usize> = (0..train_floats.len()).collect();
        order.shuffle(&mut derive_rng(
            cfg.seed,
            &format!("shuffle/fold{fold}/epoch{epoch}"),
        ));
        let mut aug_rng = derive_rng(cfg.seed, &format!("augment/fold{fold}/epoch{epoch}"));

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = Array4::<f32>::zeros((chunk.len(), 3, size, size));
            let mut targets = Vec::with_capacity(chunk.len());
            for (bi, &si) in chunk.iter().enumerate() {
                let input = preprocess_train(
                    &train_floats[si],
                    &setup.crop,
                    &setup.augment,
                    &setup.norm,
                    &mut aug_rng,
                )?;
                x.slice_mut(s![bi, .., .., ..]).assign(&input);
                targets.push(f64::from(train_labels[si]));
            }
            let quantize = scaler.is_some();
            let (trace, logits) = model.forward_trace(&x, quantize)?;
            let logits_f64: Vec<f64> = logits.iter().map(|&z| f64::from(z)).collect();
            let (loss, grad_z) = bce_with_logits_grad(&logits_f64, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { fold, epoch, step });
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();

            let scale = scaler.as_ref().map_or(1.0, GradScaler::scale);
            let dlogits: Vec<f32> = grad_z.iter().map(|&g| (g * scale) as f32).collect();
            let mut grads = model.backward(&trace, &dlogits, quantize)?;
            if let Some(sc) = scaler.as_mut() {
                if !sc.unscale_and_check(&mut grads) {
                    log::warn!(
                        "fold {fold} epoch {epoch} step {step}: overflow, step skipped (scale now {})",
                        sc.scale()
                    );
                    continue;
                }
            }
            clip_gradients(&mut grads, cfg.clip_norm).map_err(|e| match e {
                Error::NonFiniteGradient { context } => Error::NonFiniteGradient {
                    context: format!("fold {fold} epoch {epoch} step {step}: {context}"),
                },
                other => other,
            })?;
            let mut params = model.param_slices_mut();
            adam.step(&mut params, &grads, lr, cfg.weight_decay);
        }
        let train_loss = loss_sum / seen.max(1) as f64;

        let (val_loss, probs, labels) = evaluator(&model, epoch)?;
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
        let collapsed = detect_non_convergence(&preds)?;
        let val_ba = confusion(&labels, &preds)
            .ok()
            .and_then(|c| balanced_accuracy(&c));
        epoch_rows.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_balanced_accuracy: val_ba,
            val_converged: !collapsed,
        });
        if let Some(file) = log_file.as_mut() {
            let line = serde_json::json!({
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "timestamp": unix_timestamp(),
            });
            writeln!(file, "{line}").map_err(|e| {
                Error::io(setup.log_path.as_ref().expect("log path"), e)
            })?;
        }

        // Strict improvement keeps the earliest epoch on ties.
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Best {
                val_loss,
                epoch,
                params: model.snapshot_params(),
                probs,
                labels,
            });
        }
    }

    let best = best.expect("epochs >= 1");
    model.restore_params(&best.params)?;

    let preds: Vec<u8> = best.probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let collapsed = detect_non_convergence(&preds)?;
    let c = confusion(&best.labels, &preds)?;
    let rates = basic_rates(&c);
    let best_val_metrics = FoldValMetrics {
        n: best.labels.len(),
        roc_auc: roc_auc(&best.probs, &best.labels)?,
        accuracy: rates.accuracy,
        sensitivity: rates.sensitivity,
        specificity: rates.specificity,
        balanced_accuracy: balanced_accuracy(&c),
        converged: !collapsed,
    };
    let meta = CheckpointMeta {
        fold,
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
        val_metrics_per_epoch: epoch_rows,
        best_val_metrics,
        config_fingerprint: setup.config_fingerprint.clone(),
        seed: cfg.seed,
    };
    if let Some(path) = &setup.checkpoint_path {
        save_checkpoint(path, &model, &setup.crop, &meta)?;
    }
    Ok(meta)
}

fn crop_and_policy_checks(setup: &FoldRunSetup) -> Result<()> {
    setup.crop.validate()?;
    setup.augment.validate()?;
    setup.norm.validate()?;
    Ok(())
}

fn crop_size(setup: &FoldRunSetup) -> usize {
    setup.crop.output_size
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::generate_synthetic_dataset;
    use crate::splits::stratified_kfold;
    use crate::model::resolve_backbone;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let lr0 = cosine_lr(0, 5, 1e-4, 0.0).unwrap();
        assert!((lr0 - 1e-4).abs() < 1e-12);
        let lr_end = cosine_lr(5, 5, 1e-4, 0.0).unwrap();
        assert!(lr_end.abs() < 1e-12);
        let lr_mid = cosine_lr(5, 10, 1e-4, 0.0).unwrap();
        assert!((lr_mid - 5e-5).abs() < 1e-12);
        assert!(cosine_lr(0, 0, 1e-4, 0.0).is_err());
        assert!(cosine_lr(6, 5, 1e-4, 0.0).is_err());
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let mut grads = vec![vec![300.0f32, 400.0]]; // norm 500
        let before = grads.clone();
        let report = clip_gradients(&mut grads, 1000.0).unwrap();
        assert!(!report.clipped);
        assert!((report.pre_norm - 500.0).abs() < 1e-9);
        assert_eq!(grads, before);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut grads = vec![vec![1200.0f32], vec![1600.0]]; // norm 2000
        let report = clip_gradients(&mut grads, 1000.0).unwrap();
        assert!(report.clipped);
        assert!((report.pre_norm - 2000.0).abs() < 1e-9);
        let post = (f64::from(grads[0][0]).powi(2) + f64::from(grads[1][0]).powi(2)).sqrt();
        assert!((post - 1000.0).abs() / 1000.0 < 1e-6);
        // Direction preserved: same positive ratio against originals.
        assert!((grads[0][0] / 1200.0 - grads[1][0] / 1600.0).abs() < 1e-7);
        assert!(grads[0][0] > 0.0);
    }

    #[test]
    fn clip_zero_and_nonfinite() {
        let mut zeros = vec![vec![0.0f32; 4]];
        let report = clip_gradients(&mut zeros, 1000.0).unwrap();
        assert!(!report.clipped);
        assert!(zeros[0].iter().all(|&g| g == 0.0));

        let mut bad = vec![vec![f32::NAN]];
        assert!(matches!(
            clip_gradients(&mut bad, 1000.0),
            Err(Error::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn best_epoch_argmin_with_ties() {
        assert_eq!(best_epoch_by_val_loss(&[0.7, 0.5, 0.6]), Some(2));
        assert_eq!(best_epoch_by_val_loss(&[0.5, 0.5, 0.7]), Some(1));
        assert_eq!(best_epoch_by_val_loss(&[0.9]), Some(1));
        assert_eq!(best_epoch_by_val_loss(&[]), None);
    }

    fn desk_setup<'a>(
        manifest: &'a DatasetManifest,
        assignment: &'a crate::splits::FoldAssignment,
        backbone: &'a BackboneSpec,
        config: &'a TrainConfig,
    ) -> FoldRunSetup<'a> {
        FoldRunSetup {
            manifest,
            assignment,
            fold: 0,
            backbone,
            weights_dir: None,
            crop: CropSpec::default(),
            augment: AugmentPolicy::default(),
            norm: NormalizationStats::default(),
            config,
            config_fingerprint: "test".into(),
            checkpoint_path: None,
            log_path: None,
        }
    }

    #[test]
    fn injected_val_sequence_selects_argmin_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(10, 0.3, 3, dir.path(), None).unwrap();
        let assignment = stratified_kfold(&manifest, 2, 3).unwrap();
        let backbone = resolve_backbone("tiny-cnn-test", false).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let setup = desk_setup(&manifest, &assignment, &backbone, &config);

        let losses = [0.7, 0.5, 0.6];
        let meta = train_fold_with_evaluator(&setup, |_, epoch| {
            Ok((losses[epoch - 1], vec![0.4, 0.6], vec![0, 1]))
        })
        .unwrap();
        assert_eq!(meta.best_epoch, 2);
        assert_eq!(meta.best_val_loss, 0.5);

        // Ties keep the earliest epoch.
        let tied = [0.5, 0.5, 0.7];
        let meta = train_fold_with_evaluator(&setup, |_, epoch| {
            Ok((tied[epoch - 1], vec![0.4, 0.6], vec![0, 1]))
        })
        .unwrap();
        assert_eq!(meta.best_epoch, 1);

        // best_val_loss is the min over recorded epochs.
        let recorded: Vec<f64> = meta
            .val_metrics_per_epoch
            .iter()
            .map(|e| e.val_loss)
            .collect();
        assert_eq!(
            meta.best_epoch,
            best_epoch_by_val_loss(&recorded).unwrap()
        );
    }

    #[test]
    fn epochs_config_records_that_many_validations() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(10, 0.3, 4, dir.path(), None).unwrap();
        let assignment = stratified_kfold(&manifest, 2, 4).unwrap();
        let backbone = resolve_backbone("tiny-cnn-test", false).unwrap();
        let config = TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let setup = desk_setup(&manifest, &assignment, &backbone, &config);
        let mut calls = 0usize;
        let meta = train_fold_with_evaluator(&setup, |_, _| {
            calls += 1;
            Ok((1.0 / calls as f64, vec![0.2, 0.8], vec![0, 1]))
        })
        .unwrap();
        assert_eq!(calls, 5);
        assert_eq!(meta.val_metrics_per_epoch.len(), 5);
        assert_eq!(meta.best_epoch, 5);
    }

    #[test]
    fn empty_split_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(6, 0.5, 5, dir.path(), None).unwrap();
        // All samples forced into fold 0: fold 1 has an empty validation set.
        let mut map = BTreeMap::new();
        for r in &manifest.records {
            map.insert(r.sample_id.clone(), 0usize);
        }
        let assignment = crate::splits::FoldAssignment::from_mapping(2, 5, map).unwrap();
        let backbone = resolve_backbone("tiny-cnn-test", false).unwrap();
        let config = TrainConfig::default();
        let mut setup = desk_setup(&manifest, &assignment, &backbone, &config);
        setup.fold = 1;
        assert!(matches!(
            train_fold(&setup),
            Err(Error::EmptySplit { .. })
        ));
    }

    #[test]
    fn validate_single_sample_logit_zero() {
        // A zero-parameter model produces logit 0 for any input.
        let backbone = resolve_backbone("tiny-cnn-test", false).unwrap();
        let cnn = crate::model::SequentialCnn::from_specs(&crate::model::tiny_cnn_specs(), 3)
            .unwrap();
        let model = ClassifierModel::from_parts(cnn, backbone);
        let img = FloatImage::zeros((128, 128, 3));
        let (loss, probs) = validate(
            &model,
            &[img],
            &[1],
            &CropSpec::default(),
            &NormalizationStats::default(),
            8,
        )
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(probs, vec![0.5]);
    }

    #[test]
    fn validate_mean_invariant_under_duplication() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(6, 0.5, 9, dir.path(), None).unwrap();
        let (imgs_u8, labels) = gather_fold_images(
            &manifest,
            &manifest
                .records
                .iter()
                .map(|r| r.sample_id.clone())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let imgs: Vec<FloatImage> = imgs_u8.iter().map(image_to_float).collect();
        let backbone = resolve_backbone("tiny-cnn-test", false).unwrap();
        let model = build_model(&backbone, None, &mut derive_rng(2, "init")).unwrap();
        let crop = CropSpec::default();
        let norm = NormalizationStats::default();
        let (loss, probs) = validate(&model, &imgs, &labels, &crop, &norm, 4).unwrap();
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));

        let mut doubled = imgs.clone();
        doubled.extend(imgs.iter().cloned());
        let mut doubled_labels = labels.clone();
        doubled_labels.extend(labels.iter().copied());
        let (loss2, _) = validate(&model, &doubled, &doubled_labels, &crop, &norm, 4).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cosine_is_monotone_nonincreasing(total in 1usize..50) {
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = cosine_lr(t, total, 1e-4, 0.0).unwrap();
                prop_assert!(lr <= prev + 1e-18);
                prev = lr;
            }
        }

        #[test]
        fn clip_preserves_direction(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..64usize);
            let grads_orig: Vec<f32> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let mut grads = vec![grads_orig.clone()];
            let max_norm = rng.random_range(1.0..50.0f64);
            let report = clip_gradients(&mut grads, max_norm).unwrap();
            let post_norm: f64 = grads[0]
                .iter()
                .map(|&g| f64::from(g) * f64::from(g))
                .sum::<f64>()
                .sqrt();
            prop_assert!(post_norm <= max_norm * (1.0 + 1e-6) + 1e-12);
            if report.clipped {
                let scale = max_norm / report.pre_norm;
                for (&post, &pre) in grads[0].iter().zip(&grads_orig) {
                    prop_assert!((f64::from(post) - scale * f64::from(pre)).abs() < 1e-4);
                }
            } else {
                prop_assert_eq!(&grads[0], &grads_orig);
            }
        }
    }
}
