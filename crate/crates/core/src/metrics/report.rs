use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricsBundle, Result};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Paired before/after evaluation of one model under one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model: String,
    pub before: MetricsBundle,
    pub after: MetricsBundle,
    /// Attack configuration as supplied by the caller.
    pub attack: serde_json::Value,
    /// Seconds since the Unix epoch; see [`report_timestamp`].
    pub timestamp: u64,
    /// Attack-specific scalars such as a targeted success rate.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl AttackReport {
    pub fn accuracy_drop(&self) -> f64 {
        self.before.accuracy - self.after.accuracy
    }
}

/// `SOURCE_DATE_EPOCH` when set, else 0, so reports are reproducible
/// byte for byte.
pub fn report_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0)
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn fixed_opt(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_else(|| "NA".to_owned())
}

/// Writes `report.json` (every report, full precision) and `summary.csv`
/// (one row per report, six decimals, `NA` for undefined AUC).
pub fn write_report(reports: &[AttackReport], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_string_pretty(reports)?;
    json.push('\n');
    std::fs::write(out_dir.join(REPORT_FILE), json)?;

    let mut w = csv::Writer::from_path(out_dir.join(SUMMARY_FILE))?;
    w.write_record([
        "model",
        "n_before",
        "n_after",
        "before_accuracy",
        "after_accuracy",
        "accuracy_drop",
        "before_auc",
        "after_auc",
        "before_precision",
        "after_precision",
        "before_recall",
        "after_recall",
    ])?;
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.before.n.to_string(),
            r.after.n.to_string(),
            fixed(r.before.accuracy),
            fixed(r.after.accuracy),
            fixed(r.accuracy_drop()),
            fixed_opt(r.before.auc),
            fixed_opt(r.after.auc),
            fixed(r.before.precision),
            fixed(r.after.precision),
            fixed(r.before.recall),
            fixed(r.after.recall),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<AttackReport>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
