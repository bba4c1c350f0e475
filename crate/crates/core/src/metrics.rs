//! Classification metrics: confusion counting, sensitivity/specificity,
//! balanced accuracy, tie-corrected ROC AUC, per-domain grouping, fold
//! aggregation and the non-convergence rule used to filter ablation folds.
//!
//! The positive class is the atypical mitotic figure (label 1). Metrics that
//! are undefined on a given sample set (missing class, zero denominator)
//! surface as `None`, never as a silent 0 or NaN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::PredictionRecord;
use crate::error::{Error, Result};

/// TP/FP/TN/FN counts with label 1 (AMF) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn add(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            true_negatives: self.true_negatives + other.true_negatives,
            false_negatives: self.false_negatives + other.false_negatives,
        }
    }
}

/// Sensitivity (TPR), specificity (TNR) and accuracy, each flagged `None`
/// when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Metrics for one report row ("overall", a domain, or a fold label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub group_key: String,
    pub n: usize,
    pub roc_auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

/// Mean and sample SD of one metric over (optionally converged-only) folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub values: Vec<f64>,
    pub converged_flags: Vec<bool>,
    pub converged_only: bool,
    pub included: Vec<usize>,
    pub mean: f64,
    /// Sample SD (n-1 denominator); `None` with fewer than two included folds.
    pub sd: Option<f64>,
}

/// Count TP/FP/TN/FN over paired binary label sequences.
pub fn confusion(true_labels: &[u8], pred_labels: &[u8]) -> Result<ConfusionCounts> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::LengthMismatch {
            left: true_labels.len(),
            right: pred_labels.len(),
        });
    }
    if true_labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        if t > 1 {
            return Err(Error::NonBinaryLabel(t));
        }
        if p > 1 {
            return Err(Error::NonBinaryLabel(p));
        }
        match (t, p) {
            (1, 1) => c.true_positives += 1,
            (0, 1) => c.false_positives += 1,
            (0, 0) => c.true_negatives += 1,
            (1, 0) => c.false_negatives += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

/// sens = TP/(TP+FN), spec = TN/(TN+FP), acc = (TP+TN)/total.
pub fn basic_rates(c: &ConfusionCounts) -> Rates {
    let pos = c.true_positives + c.false_negatives;
    let neg = c.true_negatives + c.false_positives;
    let total = c.total();
    Rates {
        sensitivity: (pos > 0).then(|| c.true_positives as f64 / pos as f64),
        specificity: (neg > 0).then(|| c.true_negatives as f64 / neg as f64),
        accuracy: (total > 0).then(|| (c.true_positives + c.true_negatives) as f64 / total as f64),
    }
}

/// BA = (TPR + TNR) / 2.
pub fn balanced_accuracy_from_rates(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity + specificity) / 2.0
}

/// Balanced accuracy from counts; `None` when either rate is undefined.
pub fn balanced_accuracy(c: &ConfusionCounts) -> Option<f64> {
    let rates = basic_rates(c);
    match (rates.sensitivity, rates.specificity) {
        (Some(sens), Some(spec)) => Some(balanced_accuracy_from_rates(sens, spec)),
        _ => None,
    }
}

/// ROC AUC as the tie-corrected Mann-Whitney statistic, computed from average
/// ranks in O(n log n). Equals the fraction of positive–negative pairs where
/// the positive scores higher, counting ties as 1/2.
///
/// Returns `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &l in labels {
        if l > 1 {
            return Err(Error::NonBinaryLabel(l));
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("roc_auc: non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average rank within each tie group (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }

    let p = n_pos as f64;
    let n = n_neg as f64;
    Ok(Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)))
}

/// ROC curve points (FPR, TPR), from (0,0) to (1,1), one step per distinct
/// score. Used by the reporting layer and the browser demo.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::InvalidArgument(
            "roc_curve requires both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        i = j;
    }
    Ok(points)
}

/// A fold is flagged non-converged when it predicts a single class for every
/// validation sample. This is the default rule used by the pipeline.
pub fn detect_non_convergence(pred_labels: &[u8]) -> Result<bool> {
    if pred_labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred_labels.len() == 1 {
        log::warn!("non-convergence check on a single-sample set is degenerate");
    }
    let first = pred_labels[0];
    Ok(pred_labels.iter().all(|&p| p == first))
}

/// Alternative non-convergence rule: balanced accuracy stuck at chance
/// level. A constant predictor scores exactly 0.5, so the two rules agree
/// on collapsed folds; this one additionally flags chance-level mixed
/// predictors.
pub fn detect_non_convergence_by_ba(balanced_accuracy: f64) -> bool {
    (balanced_accuracy - 0.5).abs() < 1e-12
}

fn report_for(group_key: &str, records: &[&PredictionRecord]) -> Result<MetricsReport> {
    let mut truths = Vec::with_capacity(records.len());
    let mut preds = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    for r in records {
        let t = r.true_label.ok_or_else(|| Error::InvalidArgument(format!(
            "sample {:?} is missing a true label; metrics require ground truth",
            r.sample_id
        )))?;
        truths.push(t);
        preds.push(r.predicted_label);
        scores.push(r.ensemble_prob);
    }
    let c = confusion(&truths, &preds)?;
    let rates = basic_rates(&c);
    Ok(MetricsReport {
        group_key: group_key.to_string(),
        n: records.len(),
        roc_auc: roc_auc(&scores, &truths)?,
        accuracy: rates.accuracy,
        sensitivity: rates.sensitivity,
        specificity: rates.specificity,
        balanced_accuracy: balanced_accuracy(&c),
    })
}

/// One metrics row per domain (sorted by domain id) plus a pooled "overall"
/// row computed on the concatenated sample set.
pub fn per_domain_report(records: &[PredictionRecord]) -> Result<Vec<MetricsReport>> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut by_domain: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_domain.entry(r.domain_id.as_str()).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(by_domain.len() + 1);
    for (domain, group) in &by_domain {
        rows.push(report_for(domain, group)?);
    }
    let all: Vec<&PredictionRecord> = records.iter().collect();
    rows.push(report_for("overall", &all)?);
    Ok(rows)
}

/// Mean and sample SD over folds, excluding non-converged folds when
/// `converged_only` is set.
pub fn fold_aggregate(
    values: &[f64],
    converged_flags: &[bool],
    converged_only: bool,
) -> Result<FoldAggregate> {
    if values.len() != converged_flags.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: converged_flags.len(),
        });
    }
    let included: Vec<usize> = (0..values.len())
        .filter(|&i| !converged_only || converged_flags[i])
        .collect();
    if included.is_empty() {
        return Err(Error::NoIncludedFolds);
    }
    let xs: Vec<f64> = included.iter().map(|&i| values[i]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.len() >= 2).then(|| {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        var.sqrt()
    });
    Ok(FoldAggregate {
        values: values.to_vec(),
        converged_flags: converged_flags.to_vec(),
        converged_only,
        included,
        mean,
        sd,
    })
}

/// Per-metric difference of means, `b - a` (improvement of arm b over arm a).
pub fn ablation_compare(
    means_a: &BTreeMap<String, f64>,
    means_b: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    let keys_a: Vec<&String> = means_a.keys().collect();
    let keys_b: Vec<&String> = means_b.keys().collect();
    if keys_a != keys_b {
        return Err(Error::MetricSetMismatch(format!(
            "{keys_a:?} vs {keys_b:?}"
        )));
    }
    Ok(means_a
        .iter()
        .map(|(k, &a)| (k.clone(), means_b[k] - a))
        .collect())
}
