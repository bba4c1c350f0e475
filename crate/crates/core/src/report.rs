//! Rendering of metrics into Markdown / CSV tables with fixed column order
//! (ROC AUC, Accuracy, Sensitivity, Specificity, Balanced Accuracy) and
//! 4-decimal values. Byte output is deterministic for fixed inputs.

use crate::metrics::MetricsReport;

pub const METRIC_COLUMNS: [&str; 5] = [
    "ROC AUC",
    "Accuracy",
    "Sensitivity",
    "Specificity",
    "Balanced Accuracy",
];

/// Canonical metric keys in column order (used by aggregate maps).
pub const METRIC_KEYS: [&str; 5] = [
    "roc_auc",
    "accuracy",
    "sensitivity",
    "specificity",
    "balanced_accuracy",
];

pub fn fmt4(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

pub fn fmt4_signed(value: f64) -> String {
    format!("{value:+.4}")
}

pub fn fmt_mean_sd(mean: f64, sd: Option<f64>) -> String {
    match sd {
        Some(sd) => format!("{mean:.4} \u{b1} {sd:.4}"),
        None => format!("{mean:.4}"),
    }
}

fn row_values(report: &MetricsReport) -> [Option<f64>; 5] {
    [
        report.roc_auc,
        report.accuracy,
        report.sensitivity,
        report.specificity,
        report.balanced_accuracy,
    ]
}

/// Markdown table, one row per report group.
pub fn metrics_markdown(rows: &[MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str("| Group | n |");
    for col in METRIC_COLUMNS {
        out.push_str(&format!(" {col} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in METRIC_COLUMNS {
        out.push_str("---|");
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("| {} | {} |", row.group_key, row.n));
        for v in row_values(row) {
            out.push_str(&format!(" {} |", fmt4(v)));
        }
        out.push('\n');
    }
    out
}

/// CSV rendering with the same column order.
pub fn metrics_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from(
        "group,n,roc_auc,accuracy,sensitivity,specificity,balanced_accuracy\n",
    );
    for row in rows {
        out.push_str(&format!("{},{}", row.group_key, row.n));
        for v in row_values(row) {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v:.4}"));
            }
        }
        out.push('\n');
    }
    out
}
