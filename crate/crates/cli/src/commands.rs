//! Command implementations behind the `mitoslice` subcommands. Each command
//! is idempotent: re-running with the same config and seed overwrites its
//! artifacts byte-identically (training logs carry wall-clock timestamps and
//! are excluded from that contract).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mitoslice::checkpoint::{load_checkpoint, LoadedCheckpoint};
use mitoslice::data_model::{
    generate_synthetic_dataset, load_manifest, load_sample_image, DatasetManifest,
};
use mitoslice::ensemble::{
    build_prediction_records, load_predictions, predict_fold, save_predictions, PredictionRecord,
};
use mitoslice::error::Error as CoreError;
use mitoslice::metrics::{
    ablation_compare, balanced_accuracy, basic_rates, confusion, detect_non_convergence,
    fold_aggregate, per_domain_report, roc_auc, MetricsReport,
};
use mitoslice::preprocess::{image_to_float, FloatImage};
use mitoslice::report::{fmt4, fmt4_signed, fmt_mean_sd, metrics_csv, metrics_markdown, METRIC_KEYS};
use mitoslice::rng::derive_seed;
use mitoslice::splits::{
    read_assignment_csv, save_assignment, stratified_kfold, FoldAssignment,
};
use mitoslice::train::{train_fold, CheckpointMeta, FoldRunSetup};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("missing prerequisite: {0}")]
    MissingArtifact(String),
}

impl CliError {
    /// Exit codes: 2 config error, 3 data error, 4 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_)
                | CoreError::InvalidCropRatio { .. }
                | CoreError::InvalidNormalization { .. }
                | CoreError::InvalidThreshold(_)
                | CoreError::UnknownBackbone(_) => 2,
                CoreError::NonFiniteLoss { .. }
                | CoreError::NonFiniteGradient { .. }
                | CoreError::ShapeMismatch(_) => 4,
                _ => 3,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Artifact locations under the work dir.
pub struct Workspace {
    pub work_dir: PathBuf,
}

impl Workspace {
    pub fn new(config: &ExperimentConfig) -> Self {
        Workspace {
            work_dir: config.paths.work_dir.clone(),
        }
    }

    pub fn folds_csv(&self) -> PathBuf {
        self.work_dir.join("folds.csv")
    }

    pub fn checkpoint(&self, fold: usize) -> PathBuf {
        self.work_dir
            .join("checkpoints")
            .join(format!("fold_{fold}.ckpt.json"))
    }

    pub fn train_log(&self, fold: usize) -> PathBuf {
        self.work_dir.join("logs").join(format!("fold_{fold}.jsonl"))
    }

    pub fn train_summary(&self) -> PathBuf {
        self.work_dir.join("train_summary.json")
    }

    pub fn predictions_csv(&self) -> PathBuf {
        self.work_dir.join("predictions.csv")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.work_dir.join("metrics.json")
    }

    pub fn metrics_md(&self) -> PathBuf {
        self.work_dir.join("metrics.md")
    }

    pub fn ablation_dir(&self, ratio: f64) -> PathBuf {
        self.work_dir
            .join("ablation")
            .join(format!("ratio_{ratio:.2}"))
    }

    pub fn ablation_report_json(&self) -> PathBuf {
        self.work_dir.join("ablation_report.json")
    }

    pub fn ablation_report_md(&self) -> PathBuf {
        self.work_dir.join("ablation_report.md")
    }

    fn ensure_dirs(&self, sub: &[&str]) -> CliResult<()> {
        std::fs::create_dir_all(&self.work_dir)
            .map_err(|e| CoreError::Io {
                path: self.work_dir.clone(),
                source: e,
            })?;
        for s in sub {
            let dir = self.work_dir.join(s);
            std::fs::create_dir_all(&dir).map_err(|e| CoreError::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(CoreError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// `synth`: generate a synthetic dataset plus manifest.
pub fn cmd_synth(
    config: &ExperimentConfig,
    n: usize,
    amf_fraction: f64,
    out_dir: &Path,
) -> CliResult<DatasetManifest> {
    let manifest = generate_synthetic_dataset(
        n,
        amf_fraction,
        config.seed,
        out_dir,
        Some(&config.fingerprint()),
    )?;
    println!(
        "synth: {} samples ({} AMF / {} NMF) -> {}",
        manifest.len(),
        manifest.n_amf,
        manifest.n_nmf,
        out_dir.join("manifest.csv").display()
    );
    Ok(manifest)
}

fn load_config_manifest(config: &ExperimentConfig) -> CliResult<DatasetManifest> {
    if !config.data.manifest.exists() {
        return Err(CliError::MissingArtifact(format!(
            "manifest {} (run `mitoslice synth` or point data.manifest at an existing dataset)",
            config.data.manifest.display()
        )));
    }
    Ok(load_manifest(
        &config.data.manifest,
        config.data.validate_images,
    )?)
}

/// `split`: stratified fold assignment, written as sample_id,fold.
pub fn cmd_split(config: &ExperimentConfig) -> CliResult<FoldAssignment> {
    let manifest = load_config_manifest(config)?;
    let split_seed = derive_seed(config.seed, "split");
    let assignment = stratified_kfold(&manifest, config.split.k, split_seed)?;
    let ws = Workspace::new(config);
    ws.ensure_dirs(&[])?;
    save_assignment(&assignment, &ws.folds_csv(), Some(&config.split_fingerprint()))?;
    println!(
        "split: {} samples into {} folds -> {}",
        assignment.len(),
        assignment.k,
        ws.folds_csv().display()
    );
    Ok(assignment)
}

fn load_assignment(config: &ExperimentConfig, ws: &Workspace) -> CliResult<FoldAssignment> {
    let path = ws.folds_csv();
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "fold assignment {} (run `mitoslice split`)",
            path.display()
        )));
    }
    let (map, fingerprint) = read_assignment_csv(&path)?;
    let expected = config.split_fingerprint();
    match fingerprint {
        Some(found) if found != expected => {
            return Err(CliError::Core(CoreError::FingerprintMismatch {
                context: format!("fold assignment {}", path.display()),
                expected,
                found,
            }));
        }
        None => log::warn!(
            "{} carries no split fingerprint; assuming it matches",
            path.display()
        ),
        _ => {}
    }
    let split_seed = derive_seed(config.seed, "split");
    Ok(FoldAssignment::from_mapping(
        config.split.k,
        split_seed,
        map,
    )?)
}

/// `train`: one checkpoint per fold plus a summary of fold metas.
pub fn cmd_train(config: &ExperimentConfig) -> CliResult<Vec<CheckpointMeta>> {
    let manifest = load_config_manifest(config)?;
    let ws = Workspace::new(config);
    let assignment = load_assignment(config, &ws)?;
    ws.ensure_dirs(&["checkpoints", "logs"])?;
    train_all_folds(config, &manifest, &assignment, &ws)
}

fn train_all_folds(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    assignment: &FoldAssignment,
    ws: &Workspace,
) -> CliResult<Vec<CheckpointMeta>> {
    let backbone = config.backbone_spec()?;
    let train_config = config.train_config();
    let weights_dir = config.weights_dir();
    let fingerprint = config.fingerprint();
    let mut metas = Vec::with_capacity(assignment.k);
    for fold in 0..assignment.k {
        let setup = FoldRunSetup {
            manifest,
            assignment,
            fold,
            backbone: &backbone,
            weights_dir: weights_dir.as_deref(),
            crop: config.preprocess.crop,
            augment: config.preprocess.augment,
            norm: config.preprocess.normalization,
            config: &train_config,
            config_fingerprint: fingerprint.clone(),
            checkpoint_path: Some(ws.checkpoint(fold)),
            log_path: Some(ws.train_log(fold)),
        };
        let meta = train_fold(&setup)?;
        println!(
            "train: fold {fold} best epoch {} val_loss {:.4} ba {} converged {}",
            meta.best_epoch,
            meta.best_val_loss,
            fmt4(meta.best_val_metrics.balanced_accuracy),
            meta.best_val_metrics.converged,
        );
        metas.push(meta);
    }
    let summary = serde_json::to_string_pretty(&metas).expect("serializable metas");
    write_text(&ws.train_summary(), &summary)?;
    Ok(metas)
}

fn load_all_checkpoints(
    config: &ExperimentConfig,
    ws: &Workspace,
) -> CliResult<Vec<LoadedCheckpoint>> {
    let fingerprint = config.fingerprint();
    let mut checkpoints = Vec::with_capacity(config.split.k);
    for fold in 0..config.split.k {
        let path = ws.checkpoint(fold);
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "checkpoint {} (run `mitoslice train`)",
                path.display()
            )));
        }
        let ckpt = load_checkpoint(&path)?;
        if ckpt.meta.config_fingerprint != fingerprint {
            return Err(CliError::Core(CoreError::FingerprintMismatch {
                context: format!("checkpoint {}", path.display()),
                expected: fingerprint,
                found: ckpt.meta.config_fingerprint.clone(),
            }));
        }
        if ckpt.meta.fold != fold {
            return Err(CliError::Core(CoreError::CheckpointCorrupt {
                path,
                reason: format!("holds fold {} but named fold {fold}", ckpt.meta.fold),
            }));
        }
        checkpoints.push(ckpt);
    }
    Ok(checkpoints)
}

/// `predict`: fold-ensemble probabilities over a manifest.
pub fn cmd_predict(
    config: &ExperimentConfig,
    manifest_path: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<Vec<PredictionRecord>> {
    let manifest = match manifest_path {
        Some(path) => load_manifest(path, config.data.validate_images)?,
        None => load_config_manifest(config)?,
    };
    let ws = Workspace::new(config);
    let checkpoints = load_all_checkpoints(config, &ws)?;

    let mut images: Vec<FloatImage> = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        images.push(image_to_float(&load_sample_image(
            &manifest.image_path(record),
        )?));
    }
    let mut per_fold = Vec::with_capacity(checkpoints.len());
    for ckpt in &checkpoints {
        per_fold.push(predict_fold(
            ckpt,
            &images,
            &config.preprocess.crop,
            &config.preprocess.normalization,
            config.train.batch_size,
        )?);
    }
    let sample_ids: Vec<String> = manifest.records.iter().map(|r| r.sample_id.clone()).collect();
    let domains: Vec<String> = manifest.records.iter().map(|r| r.domain_id.clone()).collect();
    let truths: Vec<Option<u8>> = manifest.records.iter().map(|r| Some(r.label)).collect();
    let records = build_prediction_records(
        &sample_ids,
        &domains,
        &truths,
        &per_fold,
        config.inference.threshold,
    )?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ws.predictions_csv());
    ws.ensure_dirs(&[])?;
    save_predictions(&records, &out_path, Some(&config.fingerprint()))?;
    println!(
        "predict: {} samples x {} folds -> {}",
        records.len(),
        checkpoints.len(),
        out_path.display()
    );
    Ok(records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateStat {
    pub mean: f64,
    pub sd: Option<f64>,
    pub included: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub report_type: String,
    pub config_fingerprint: String,
    pub threshold: f64,
    pub n: usize,
    pub per_domain: Vec<MetricsReport>,
    pub per_fold: Vec<FoldRow>,
    /// Balanced-accuracy aggregate over fold columns, all folds and
    /// converged-only.
    pub fold_balanced_accuracy: BTreeMap<String, Option<AggregateStat>>,
}

fn fold_metrics_row(
    fold: usize,
    probs: &[f64],
    truths: &[u8],
    threshold: f64,
) -> CliResult<FoldRow> {
    let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    let c = confusion(truths, &preds)?;
    let rates = basic_rates(&c);
    let collapsed = detect_non_convergence(&preds)?;
    Ok(FoldRow {
        fold,
        metrics: MetricsReport {
            group_key: format!("fold_{fold}"),
            n: truths.len(),
            roc_auc: roc_auc(probs, truths)?,
            accuracy: rates.accuracy,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            balanced_accuracy: balanced_accuracy(&c),
        },
        converged: !collapsed,
    })
}

/// `evaluate`: challenge-style metrics from a prediction CSV.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    predictions_path: Option<&Path>,
) -> CliResult<EvaluationReport> {
    let ws = Workspace::new(config);
    let path = predictions_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ws.predictions_csv());
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "predictions {} (run `mitoslice predict`)",
            path.display()
        )));
    }
    let (records, fingerprint) = load_predictions(&path)?;
    let expected = config.fingerprint();
    match fingerprint {
        Some(found) if found != expected => {
            return Err(CliError::Core(CoreError::FingerprintMismatch {
                context: format!("predictions {}", path.display()),
                expected,
                found,
            }));
        }
        None => log::warn!(
            "{} carries no config fingerprint; assuming it matches",
            path.display()
        ),
        _ => {}
    }
    let truths: Vec<u8> = records
        .iter()
        .map(|r| {
            r.true_label.ok_or_else(|| {
                CliError::Core(CoreError::InvalidArgument(format!(
                    "sample {:?} has no true label; evaluate requires ground truth",
                    r.sample_id
                )))
            })
        })
        .collect::<CliResult<_>>()?;

    let per_domain = per_domain_report(&records)?;

    let k = records[0].per_fold_prob.len();
    let mut per_fold = Vec::with_capacity(k);
    for fold in 0..k {
        let probs: Vec<f64> = records.iter().map(|r| r.per_fold_prob[fold]).collect();
        per_fold.push(fold_metrics_row(
            fold,
            &probs,
            &truths,
            config.inference.threshold,
        )?);
    }

    let ba_values: Vec<f64> = per_fold
        .iter()
        .map(|row| row.metrics.balanced_accuracy.unwrap_or(0.5))
        .collect();
    let flags: Vec<bool> = per_fold.iter().map(|row| row.converged).collect();
    let mut fold_ba = BTreeMap::new();
    for (key, converged_only) in [("all", false), ("converged_only", true)] {
        let stat = fold_aggregate(&ba_values, &flags, converged_only)
            .ok()
            .map(|a| AggregateStat {
                mean: a.mean,
                sd: a.sd,
                included: a.included.len(),
            });
        fold_ba.insert(key.to_string(), stat);
    }

    let report = EvaluationReport {
        report_type: "evaluation".into(),
        config_fingerprint: expected,
        threshold: config.inference.threshold,
        n: records.len(),
        per_domain,
        per_fold,
        fold_balanced_accuracy: fold_ba,
    };

    ws.ensure_dirs(&[])?;
    emit_evaluation(&report, config, &ws)?;
    println!(
        "evaluate: {} samples, overall BA {} -> {}",
        report.n,
        fmt4(report
            .per_domain
            .last()
            .and_then(|r| r.balanced_accuracy)),
        ws.metrics_json().display()
    );
    Ok(report)
}

fn evaluation_markdown(report: &EvaluationReport) -> String {
    let mut md = String::new();
    md.push_str("# Evaluation report\n\n");
    md.push_str(&format!(
        "config_fingerprint: `{}`  \nthreshold: {}  \nsamples: {}\n\n",
        report.config_fingerprint, report.threshold, report.n
    ));
    md.push_str("## Per-domain (ensemble)\n\n");
    md.push_str(&metrics_markdown(&report.per_domain));
    md.push_str("\n## Per-fold (each fold model on the full set)\n\n");
    let fold_rows: Vec<MetricsReport> = report.per_fold.iter().map(|r| r.metrics.clone()).collect();
    md.push_str(&metrics_markdown(&fold_rows));
    md.push('\n');
    for row in &report.per_fold {
        if !row.converged {
            md.push_str(&format!(
                "- fold_{} flagged non-converged (single-class predictions)\n",
                row.fold
            ));
        }
    }
    md.push_str("\n## Fold balanced accuracy\n\n");
    for (key, stat) in &report.fold_balanced_accuracy {
        match stat {
            Some(s) => md.push_str(&format!(
                "- {key}: {} over {} folds\n",
                fmt_mean_sd(s.mean, s.sd),
                s.included
            )),
            None => md.push_str(&format!("- {key}: undefined (no folds included)\n")),
        }
    }
    md
}

fn emit_evaluation(
    report: &EvaluationReport,
    config: &ExperimentConfig,
    ws: &Workspace,
) -> CliResult<()> {
    let json = serde_json::to_string_pretty(report).expect("serializable report");
    write_text(&ws.metrics_json(), &json)?;
    if config.report.formats.iter().any(|f| f == "markdown") {
        write_text(&ws.metrics_md(), &evaluation_markdown(report))?;
    }
    if config.report.formats.iter().any(|f| f == "csv") {
        write_text(
            &ws.work_dir.join("metrics.csv"),
            &metrics_csv(&report.per_domain),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub crop_ratio: f64,
    pub per_fold: Vec<FoldRow>,
    pub converged_flags: Vec<bool>,
    /// metric key -> (all-folds stat, converged-only stat).
    pub aggregates_all: BTreeMap<String, AggregateStat>,
    pub aggregates_converged: BTreeMap<String, Option<AggregateStat>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub report_type: String,
    pub split_fingerprint: String,
    pub arms: Vec<ArmReport>,
    /// Per non-baseline arm: metric key -> improvement of converged-only
    /// means over the baseline arm (None when either side is undefined).
    pub improvement_vs_baseline: Vec<BTreeMap<String, Option<f64>>>,
}

fn meta_to_fold_row(meta: &CheckpointMeta) -> FoldRow {
    let m = &meta.best_val_metrics;
    FoldRow {
        fold: meta.fold,
        metrics: MetricsReport {
            group_key: format!("fold_{}", meta.fold),
            n: m.n,
            roc_auc: m.roc_auc,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            balanced_accuracy: m.balanced_accuracy,
        },
        converged: m.converged,
    }
}

fn metric_value(row: &FoldRow, key: &str) -> Option<f64> {
    match key {
        "roc_auc" => row.metrics.roc_auc,
        "accuracy" => row.metrics.accuracy,
        "sensitivity" => row.metrics.sensitivity,
        "specificity" => row.metrics.specificity,
        "balanced_accuracy" => row.metrics.balanced_accuracy,
        _ => None,
    }
}

fn arm_report(crop_ratio: f64, metas: &[CheckpointMeta]) -> CliResult<ArmReport> {
    let per_fold: Vec<FoldRow> = metas.iter().map(meta_to_fold_row).collect();
    let flags: Vec<bool> = per_fold.iter().map(|r| r.converged).collect();
    let mut aggregates_all = BTreeMap::new();
    let mut aggregates_converged = BTreeMap::new();
    for &key in &METRIC_KEYS {
        // A fold with an undefined metric contributes its chance-level
        // value for BA-like metrics; undefined cells only arise on
        // degenerate validation splits.
        let values: Vec<f64> = per_fold
            .iter()
            .map(|row| metric_value(row, key).unwrap_or(0.5))
            .collect();
        let all = fold_aggregate(&values, &flags, false)?;
        aggregates_all.insert(
            key.to_string(),
            AggregateStat {
                mean: all.mean,
                sd: all.sd,
                included: all.included.len(),
            },
        );
        let conv = fold_aggregate(&values, &flags, true).ok().map(|a| AggregateStat {
            mean: a.mean,
            sd: a.sd,
            included: a.included.len(),
        });
        aggregates_converged.insert(key.to_string(), conv);
    }
    Ok(ArmReport {
        crop_ratio,
        per_fold,
        converged_flags: flags,
        aggregates_all,
        aggregates_converged,
    })
}

/// `ablate`: train every crop-ratio arm on one shared fold assignment and
/// emit the comparison table with converged-only aggregates and the
/// improvement row(s) against the first (baseline) arm.
pub fn cmd_ablate(config: &ExperimentConfig, ratios: &[f64]) -> CliResult<AblationReport> {
    if ratios.len() < 2 {
        return Err(CliError::Usage(format!(
            "ablate needs at least two crop ratios, got {ratios:?}"
        )));
    }
    for &r in ratios {
        if !(r > 0.0 && r <= 1.0) {
            return Err(CliError::Core(CoreError::InvalidCropRatio { ratio: r }));
        }
    }
    let manifest = load_config_manifest(config)?;
    let ws = Workspace::new(config);
    ws.ensure_dirs(&["ablation"])?;

    // One fold assignment shared across every arm.
    let split_seed = derive_seed(config.seed, "split");
    let assignment = stratified_kfold(&manifest, config.split.k, split_seed)?;
    save_assignment(
        &assignment,
        &ws.work_dir.join("ablation").join("folds.csv"),
        Some(&config.split_fingerprint()),
    )?;

    let mut arms = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut arm_config = config.clone();
        arm_config.preprocess.crop.ratio = ratio;
        arm_config.paths.work_dir = ws.ablation_dir(ratio);
        let arm_ws = Workspace::new(&arm_config);
        arm_ws.ensure_dirs(&["checkpoints", "logs"])?;
        let metas = train_all_folds(&arm_config, &manifest, &assignment, &arm_ws)?;
        let arm = arm_report(ratio, &metas)?;
        let n_converged = arm.converged_flags.iter().filter(|&&f| f).count();
        println!(
            "ablate: ratio {ratio:.2} converged {n_converged}/{} BA(converged) {}",
            arm.converged_flags.len(),
            arm.aggregates_converged["balanced_accuracy"]
                .as_ref()
                .map(|s| fmt_mean_sd(s.mean, s.sd))
                .unwrap_or_else(|| "n/a".to_string()),
        );
        arms.push(arm);
    }

    let mut improvements = Vec::new();
    for arm in arms.iter().skip(1) {
        let row = improvement_row(&arms[0], arm)?;
        improvements.push(row);
    }

    let report = AblationReport {
        report_type: "ablation".into(),
        split_fingerprint: config.split_fingerprint(),
        arms,
        improvement_vs_baseline: improvements,
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    write_text(&ws.ablation_report_json(), &json)?;
    if config.report.formats.iter().any(|f| f == "markdown") {
        write_text(&ws.ablation_report_md(), &ablation_markdown(&report))?;
    }
    Ok(report)
}

/// Converged-only mean deltas (arm - baseline); a metric undefined on either
/// side yields None in that cell.
fn improvement_row(
    baseline: &ArmReport,
    arm: &ArmReport,
) -> CliResult<BTreeMap<String, Option<f64>>> {
    let mut defined_a = BTreeMap::new();
    let mut defined_b = BTreeMap::new();
    for &key in &METRIC_KEYS {
        if let (Some(a), Some(b)) = (
            baseline.aggregates_converged[key].as_ref(),
            arm.aggregates_converged[key].as_ref(),
        ) {
            defined_a.insert(key.to_string(), a.mean);
            defined_b.insert(key.to_string(), b.mean);
        }
    }
    let deltas = if defined_a.is_empty() {
        BTreeMap::new()
    } else {
        ablation_compare(&defined_a, &defined_b)?
    };
    Ok(METRIC_KEYS
        .iter()
        .map(|&key| (key.to_string(), deltas.get(key).copied()))
        .collect())
}

fn ablation_markdown(report: &AblationReport) -> String {
    let mut md = String::new();
    md.push_str("# Center-crop ablation (converged folds only)\n\n");
    md.push_str(&format!(
        "shared folds fingerprint: `{}`\n\n",
        report.split_fingerprint
    ));
    md.push_str(
        "| Method | ROC AUC | Accuracy | Sensitivity | Specificity | Balanced Accuracy | Converged |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|\n");
    for arm in &report.arms {
        let label = if (arm.crop_ratio - 1.0).abs() < 1e-12 {
            "Without cropping".to_string()
        } else {
            format!("With {:.0}% cropping", arm.crop_ratio * 100.0)
        };
        md.push_str(&format!("| {label} |"));
        for &key in &METRIC_KEYS {
            match arm.aggregates_converged[key].as_ref() {
                Some(s) => md.push_str(&format!(" {} |", fmt_mean_sd(s.mean, s.sd))),
                None => md.push_str(" n/a |"),
            }
        }
        let n_conv = arm.converged_flags.iter().filter(|&&f| f).count();
        md.push_str(&format!(" {n_conv}/{} |\n", arm.converged_flags.len()));
    }
    for (i, row) in report.improvement_vs_baseline.iter().enumerate() {
        md.push_str(&format!("| **Improvement (arm {})** |", i + 1));
        for &key in &METRIC_KEYS {
            match row[key] {
                Some(delta) => md.push_str(&format!(" **{}** |", fmt4_signed(delta))),
                None => md.push_str(" n/a |"),
            }
        }
        md.push_str(" |\n");
    }
    md.push_str("\nAll-folds aggregates (non-converged included):\n\n");
    for arm in &report.arms {
        let ba = &arm.aggregates_all["balanced_accuracy"];
        md.push_str(&format!(
            "- ratio {:.2}: BA {}\n",
            arm.crop_ratio,
            fmt_mean_sd(ba.mean, ba.sd)
        ));
    }
    md
}

/// `report`: re-render a metrics artifact into markdown/json/csv.
pub fn cmd_report(input: &Path, format: &str, out: Option<&Path>) -> CliResult<PathBuf> {
    if !input.exists() {
        return Err(CliError::MissingArtifact(format!(
            "metrics artifact {}",
            input.display()
        )));
    }
    let text = std::fs::read_to_string(input).map_err(|e| {
        CliError::Core(CoreError::Io {
            path: input.to_path_buf(),
            source: e,
        })
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad metrics JSON: {e}")))?;
    let report_type = value
        .get("report_type")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();

    let (rendered, extension) = match (report_type.as_str(), format) {
        ("evaluation", "markdown") => {
            let report: EvaluationReport = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(format!("bad evaluation report: {e}")))?;
            if report.per_domain.is_empty() {
                return Err(CliError::Usage("empty metrics list".into()));
            }
            (evaluation_markdown(&report), "md")
        }
        ("evaluation", "csv") => {
            let report: EvaluationReport = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(format!("bad evaluation report: {e}")))?;
            if report.per_domain.is_empty() {
                return Err(CliError::Usage("empty metrics list".into()));
            }
            (metrics_csv(&report.per_domain), "csv")
        }
        ("ablation", "markdown") => {
            let report: AblationReport = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(format!("bad ablation report: {e}")))?;
            if report.arms.is_empty() {
                return Err(CliError::Usage("empty metrics list".into()));
            }
            (ablation_markdown(&report), "md")
        }
        (_, "json") => {
            // Canonical pretty re-serialization.
            (
                serde_json::to_string_pretty(&value).expect("reserializable"),
                "json",
            )
        }
        (rt, fmt) => {
            return Err(CliError::Usage(format!(
                "cannot render report_type {rt:?} as {fmt:?} (markdown|json|csv)"
            )));
        }
    };
    let out_path = out.map(Path::to_path_buf).unwrap_or_else(|| {
        input.with_extension(format!("rendered.{extension}"))
    });
    write_text(&out_path, &rendered)?;
    println!("report: {} -> {}", input.display(), out_path.display());
    Ok(out_path)
}
