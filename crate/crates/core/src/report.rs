//! Experiment reports: a human-readable table plus JSON records.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::fusion::FusionVariant;
use crate::inference::Task;
use crate::metrics::{Metric, MetricRow};
use crate::train::TrainConfig;

/// Column headers in table order.
pub const COLUMNS: [&str; 5] = ["Acc(%)", "F1", "Acc(%)", "MAE", "r"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_speakers: Vec<String>,
    pub validation_videos: Vec<String>,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    /// Index into the configuration grid of the selected configuration.
    pub selected_config: usize,
    pub best_epoch: usize,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: FusionVariant,
    pub task: Task,
    pub folds: Vec<FoldReport>,
    /// Mean over folds of every defined metric.
    pub mean: MetricRow,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub task: Task,
    pub rows: Vec<ExperimentReport>,
}

fn cell(m: Metric, percent: bool, precision: usize) -> String {
    match m {
        Metric::Value(v) if percent => format!("{:.*}", precision, v * 100.0),
        Metric::Value(v) => format!("{v:.precision$}"),
        other => other.to_string(),
    }
}

/// `label  Acc(%)  F1  Acc(%)  MAE  r` with accuracies and F1 on a 0–100 scale.
pub fn table_row(label: &str, m: &MetricRow) -> String {
    format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}",
        label,
        cell(m.binary_acc, true, 1),
        cell(m.f1, true, 1),
        cell(m.five_class_acc, true, 1),
        cell(m.mae, false, 3),
        cell(m.pearson_r, false, 3),
    )
}

pub fn table_header(first: &str) -> String {
    format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}",
        first, COLUMNS[0], COLUMNS[1], COLUMNS[2], COLUMNS[3], COLUMNS[4]
    )
}

impl ExperimentReport {
    /// Per-fold rows followed by the mean row.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} / {}", self.variant.table_label(), self.task);
        let _ = writeln!(s, "{}", table_header("fold"));
        for f in &self.folds {
            let _ = writeln!(s, "{}", table_row(&format!("fold {}", f.fold), &f.metrics));
        }
        let _ = writeln!(s, "{}", table_row("mean", &self.mean));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl AblationReport {
    /// One mean row per variant.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ablation / {}", self.task);
        let _ = writeln!(s, "{}", table_header("model"));
        for r in &self.rows {
            let _ = writeln!(s, "{}", table_row(&r.variant.table_label(), &r.mean));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_column_order() {
        let h = table_header("model");
        let cols: Vec<&str> = h.split_whitespace().skip(1).collect();
        assert_eq!(cols.join(" "), "Acc(%) F1 Acc(%) MAE r");
    }

    #[test]
    fn row_formatting() {
        let m = MetricRow {
            binary_acc: Metric::Value(0.771),
            f1: Metric::Value(0.779),
            five_class_acc: Metric::Value(0.42),
            mae: Metric::Value(0.87),
            pearson_r: Metric::Undefined,
        };
        let cols: Vec<String> = table_row("TFN", &m).split_whitespace().map(String::from).collect();
        assert_eq!(cols, ["TFN", "77.1", "77.9", "42.0", "0.870", "undef"]);
    }
}
