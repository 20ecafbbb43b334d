//! The evaluation columns: binary accuracy, positive-class F1, five-class
//! accuracy, mean absolute error and Pearson correlation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, TfnError};
use crate::inference::{decide, Decision, Prediction, Task};
use crate::labels::{binarize_label, map_to_five_class};

/// A metric value, or the reason there is none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    /// Mathematically undefined on this data (e.g. zero variance for r).
    Undefined,
    /// Not produced by this task's head.
    NotApplicable,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }

    /// Mean over the defined entries. Undefined if none are defined.
    pub fn mean(items: &[Metric]) -> Metric {
        if items.iter().all(|m| *m == Metric::NotApplicable) {
            return Metric::NotApplicable;
        }
        let vals: Vec<f64> = items.iter().filter_map(|m| m.value()).collect();
        if vals.is_empty() {
            Metric::Undefined
        } else {
            Metric::Value(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Undefined => s.serialize_str("undefined"),
            Metric::NotApplicable => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            Null(()),
        }
        match Option::<Raw>::deserialize(d)? {
            None | Some(Raw::Null(())) => Ok(Metric::NotApplicable),
            Some(Raw::Num(v)) => Ok(Metric::Value(v)),
            Some(Raw::Text(t)) if t == "undefined" => Ok(Metric::Undefined),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("bad metric `{t}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Metric::Undefined => f.pad("undef"),
            Metric::NotApplicable => f.pad("-"),
        }
    }
}

/// One row of the results table. Accuracies and F1 are fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub binary_acc: Metric,
    pub f1: Metric,
    pub five_class_acc: Metric,
    pub mae: Metric,
    pub pearson_r: Metric,
}

impl MetricRow {
    pub fn columns(&self) -> [Metric; 5] {
        [self.binary_acc, self.f1, self.five_class_acc, self.mae, self.pearson_r]
    }

    pub fn mean(rows: &[MetricRow]) -> MetricRow {
        let col = |f: fn(&MetricRow) -> Metric| Metric::mean(&rows.iter().map(f).collect::<Vec<_>>());
        MetricRow {
            binary_acc: col(|r| r.binary_acc),
            f1: col(|r| r.f1),
            five_class_acc: col(|r| r.five_class_acc),
            mae: col(|r| r.mae),
            pearson_r: col(|r| r.pearson_r),
        }
    }
}

/// Counts of a binary confusion matrix, positive class = sentiment ≥ 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn accuracy(&self) -> Metric {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            return Metric::Undefined;
        }
        Metric::Value((self.tp + self.tn) as f64 / n as f64)
    }

    /// Undefined when there are no positives among predictions or labels.
    pub fn f1(&self) -> Metric {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return Metric::Undefined;
        }
        Metric::Value(2.0 * self.tp as f64 / denom as f64)
    }
}

pub fn mean_absolute_error(pred: &[f64], truth: &[f64]) -> Metric {
    if pred.is_empty() || pred.len() != truth.len() {
        return Metric::Undefined;
    }
    Metric::Value(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation; undefined for fewer than two points or zero variance.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Metric {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Metric::Undefined;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Metric::Undefined;
    }
    Metric::Value((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Scores `preds` against raw labels.
///
/// Binary heads fill the accuracy and F1 columns, five-class heads the
/// five-class column. Regression scores fill every column: the discrete
/// columns use the same label mappings applied to the predicted score.
pub fn metrics(preds: &[Prediction], labels: &[f64], task: Task) -> Result<MetricRow> {
    if preds.len() != labels.len() {
        return Err(TfnError::dim("metrics", labels.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(TfnError::Empty("no predictions to score".into()));
    }
    let truth_bin = labels.iter().map(|&y| binarize_label(y)).collect::<Result<Vec<_>>>()?;
    let truth_cls = labels.iter().map(|&y| map_to_five_class(y)).collect::<Result<Vec<_>>>()?;
    let mut row = MetricRow {
        binary_acc: Metric::NotApplicable,
        f1: Metric::NotApplicable,
        five_class_acc: Metric::NotApplicable,
        mae: Metric::NotApplicable,
        pearson_r: Metric::NotApplicable,
    };
    let mut bins = Vec::with_capacity(preds.len());
    let mut classes = Vec::with_capacity(preds.len());
    let mut scores = Vec::with_capacity(preds.len());
    for p in preds {
        match (task, decide(p)) {
            (Task::Binary, Decision::Binary(b)) => bins.push(b),
            (Task::FiveClass, Decision::Class(c)) => classes.push(c),
            (Task::Regression, Decision::Score(s)) => {
                bins.push(s >= 0.0);
                classes.push(map_to_five_class(s.clamp(-3.0, 3.0))?);
                scores.push(s);
            }
            _ => return Err(TfnError::Config(format!("prediction {p:?} does not match task {task}"))),
        }
    }
    if !bins.is_empty() {
        let c = Confusion::from_pairs(bins.iter().copied().zip(truth_bin.iter().copied()));
        row.binary_acc = c.accuracy();
        row.f1 = c.f1();
    }
    if !classes.is_empty() {
        let hits = classes.iter().zip(&truth_cls).filter(|(a, b)| a == b).count();
        row.five_class_acc = Metric::Value(hits as f64 / classes.len() as f64);
    }
    if !scores.is_empty() {
        row.mae = mean_absolute_error(&scores, labels);
        row.pearson_r = pearson_r(&scores, labels);
    }
    Ok(row)
}
