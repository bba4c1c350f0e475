//! Fold-ensemble inference: per-checkpoint prediction, probability
//! averaging, thresholded decisions and the prediction CSV format.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::checkpoint::LoadedCheckpoint;
use crate::error::{Error, Result};
use crate::model::sigmoid;
use crate::preprocess::{preprocess_eval, CropSpec, FloatImage, NormalizationStats};

/// Per-sample probabilities from every fold plus the ensembled decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub domain_id: String,
    pub true_label: Option<u8>,
    pub per_fold_prob: Vec<f64>,
    pub ensemble_prob: f64,
    pub predicted_label: u8,
}

/// Run one fold checkpoint over a sample set (eval preprocessing, no
/// augmentation). The checkpoint must have been trained with the same crop
/// spec; a mismatch is refused to prevent train/test geometry skew.
pub fn predict_fold(
    checkpoint: &LoadedCheckpoint,
    images: &[FloatImage],
    crop: &CropSpec,
    norm: &NormalizationStats,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if checkpoint.crop != *crop {
        return Err(Error::CropSpecMismatch {
            trained: checkpoint.crop.ratio,
            requested: crop.ratio,
        });
    }
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let size = crop.output_size;
    let mut probs = Vec::with_capacity(images.len());
    let mut offset = 0;
    while offset < images.len() {
        let end = (offset + batch_size.max(1)).min(images.len());
        let mut x = Array4::<f32>::zeros((end - offset, 3, size, size));
        for (bi, img) in images[offset..end].iter().enumerate() {
            let input = preprocess_eval(img, crop, norm)?;
            x.slice_mut(s![bi, .., .., ..]).assign(&input);
        }
        let logits = checkpoint.model.forward(&x)?;
        probs.extend(logits.iter().map(|&z| sigmoid(f64::from(z))));
        offset = end;
    }
    Ok(probs)
}

/// Column-wise arithmetic mean of a k x n probability matrix.
pub fn ensemble(per_fold: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_fold.is_empty() {
        return Err(Error::InvalidArgument(
            "ensemble needs at least one fold".into(),
        ));
    }
    let n = per_fold[0].len();
    for (fold, row) in per_fold.iter().enumerate() {
        if row.len() != n {
            return Err(Error::RaggedMatrix {
                fold,
                expected: n,
                found: row.len(),
            });
        }
        for (sample, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityOutOfRange {
                    fold,
                    sample,
                    value: p,
                });
            }
        }
    }
    let k = per_fold.len() as f64;
    Ok((0..n)
        .map(|i| per_fold.iter().map(|row| row[i]).sum::<f64>() / k)
        .collect())
}

/// Label 1 (AMF) iff prob >= threshold; the boundary goes to the positive
/// class.
pub fn decide(prob: f64, threshold: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidThreshold(threshold));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!(
            "probability {prob} outside [0, 1]"
        )));
    }
    Ok(u8::from(prob >= threshold))
}

/// Assemble per-sample records from a k x n probability matrix.
pub fn build_prediction_records(
    sample_ids: &[String],
    domain_ids: &[String],
    true_labels: &[Option<u8>],
    per_fold: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<PredictionRecord>> {
    let n = sample_ids.len();
    if domain_ids.len() != n || true_labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: domain_ids.len().min(true_labels.len()),
        });
    }
    let means = ensemble(per_fold)?;
    if means.len() != n {
        return Err(Error::LengthMismatch {
            left: means.len(),
            right: n,
        });
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        records.push(PredictionRecord {
            sample_id: sample_ids[i].clone(),
            domain_id: domain_ids[i].clone(),
            true_label: true_labels[i],
            per_fold_prob: per_fold.iter().map(|row| row[i]).collect(),
            ensemble_prob: means[i],
            predicted_label: decide(means[i], threshold)?,
        });
    }
    Ok(records)
}

fn prediction_header(k: usize) -> String {
    let mut cols = vec![
        "sample_id".to_string(),
        "domain".to_string(),
        "true_label".to_string(),
    ];
    for fold in 0..k {
        cols.push(format!("prob_fold_{fold}"));
    }
    cols.push("prob_ensemble".to_string());
    cols.push("pred_label".to_string());
    cols.join(",")
}

/// Write the prediction CSV (probabilities at 6 decimals), embedding the
/// config fingerprint as a leading comment.
pub fn save_predictions(
    records: &[PredictionRecord],
    path: &Path,
    fingerprint: Option<&str>,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = records[0].per_fold_prob.len();
    let mut out = String::new();
    if let Some(fp) = fingerprint {
        out.push_str(&format!("# config_fingerprint={fp}\n"));
    }
    out.push_str(&prediction_header(k));
    out.push('\n');
    for r in records {
        if r.per_fold_prob.len() != k {
            return Err(Error::RaggedMatrix {
                fold: 0,
                expected: k,
                found: r.per_fold_prob.len(),
            });
        }
        let truth = r.true_label.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{truth}", r.sample_id, r.domain_id));
        for p in &r.per_fold_prob {
            out.push_str(&format!(",{p:.6}"));
        }
        out.push_str(&format!(",{:.6},{}\n", r.ensemble_prob, r.predicted_label));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a prediction CSV back; returns the records and the embedded
/// fingerprint, if any.
pub fn load_predictions(path: &Path) -> Result<(Vec<PredictionRecord>, Option<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fingerprint = None;
    let mut k: Option<usize> = None;
    let mut records = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(fp) = comment.trim().strip_prefix("config_fingerprint=") {
                fingerprint = Some(fp.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if k.is_none() {
            // Header row: count prob_fold_* columns and validate shape.
            let folds = fields
                .iter()
                .filter(|f| f.starts_with("prob_fold_"))
                .count();
            if folds == 0
                || fields.len() != folds + 5
                || fields[0] != "sample_id"
                || fields[1] != "domain"
                || fields[2] != "true_label"
                || fields[fields.len() - 2] != "prob_ensemble"
                || fields[fields.len() - 1] != "pred_label"
            {
                return Err(Error::BadPredictionFile {
                    path: path.to_path_buf(),
                    reason: format!("unexpected header {line:?}"),
                });
            }
            k = Some(folds);
            continue;
        }
        let k = k.unwrap();
        if fields.len() != k + 5 {
            return Err(Error::BadPredictionFile {
                path: path.to_path_buf(),
                reason: format!("row has {} fields, expected {}", fields.len(), k + 5),
            });
        }
        let parse_prob = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::BadPredictionFile {
                path: path.to_path_buf(),
                reason: format!("bad probability {s:?}"),
            })
        };
        let true_label = if fields[2].is_empty() {
            None
        } else {
            Some(
                fields[2]
                    .parse::<u8>()
                    .map_err(|_| Error::BadPredictionFile {
                        path: path.to_path_buf(),
                        reason: format!("bad true_label {:?}", fields[2]),
                    })?,
            )
        };
        let per_fold_prob: Vec<f64> = fields[3..3 + k]
            .iter()
            .map(|s| parse_prob(s))
            .collect::<Result<_>>()?;
        records.push(PredictionRecord {
            sample_id: fields[0].to_string(),
            domain_id: fields[1].to_string(),
            true_label,
            per_fold_prob,
            ensemble_prob: parse_prob(fields[3 + k])?,
            predicted_label: fields[4 + k]
                .parse::<u8>()
                .map_err(|_| Error::BadPredictionFile {
                    path: path.to_path_buf(),
                    reason: format!("bad pred_label {:?}", fields[4 + k]),
                })?,
        });
    }
    if records.is_empty() {
        return Err(Error::BadPredictionFile {
            path: path.to_path_buf(),
            reason: "no prediction rows".into(),
        });
    }
    Ok((records, fingerprint))
}
