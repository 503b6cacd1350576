//! Confusion matrices and precision/recall/F1 with support weighting.

mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Class;

pub use report::{
    emit_report, length_histogram, AnchorRow, ExperimentReport, LengthRow, ReportFiles,
    StrategyRow, VotingRow, REPORT_SCHEMA,
};

/// Counts with "with links" as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen from the negative class.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

pub fn confusion(y_true: &[Class], y_pred: &[Class]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "label length mismatch: {} true vs {} predicted",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Data("cannot evaluate zero predictions".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Class::Positive, Class::Positive) => cm.tp += 1,
            (Class::Negative, Class::Positive) => cm.fp += 1,
            (Class::Positive, Class::Negative) => cm.fn_ += 1,
            (Class::Negative, Class::Negative) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
    /// Support-weighted mean over both classes.
    pub weighted: Averaged,
    #[serde(rename = "macro")]
    pub macro_avg: Averaged,
    /// A 0/0 ratio was reported as 0.
    pub zero_division: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Weighted,
    Macro,
}

impl Metrics {
    pub fn averaged(&self, how: Averaging) -> Averaged {
        match how {
            Averaging::Weighted => self.weighted,
            Averaging::Macro => self.macro_avg,
        }
    }
}

fn ratio(num: usize, den: usize, zero_division: &mut bool) -> f64 {
    if den == 0 {
        *zero_division = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(cm: &ConfusionMatrix, zero_division: &mut bool) -> ClassMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp, zero_division);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, zero_division);
    let f1 = if precision + recall == 0.0 {
        *zero_division = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: cm.tp + cm.fn_,
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let mut zero_division = false;
    let positive = class_metrics(cm, &mut zero_division);
    let negative = class_metrics(&cm.swapped(), &mut zero_division);
    if zero_division {
        log::warn!("undefined precision/recall/F1 reported as 0 for {cm:?}");
    }
    let total = (positive.support + negative.support) as f64;
    let weigh = |a: f64, b: f64| {
        if total == 0.0 {
            0.0
        } else {
            (a * positive.support as f64 + b * negative.support as f64) / total
        }
    };
    Metrics {
        positive,
        negative,
        weighted: Averaged {
            precision: weigh(positive.precision, negative.precision),
            recall: weigh(positive.recall, negative.recall),
            f1: weigh(positive.f1, negative.f1),
        },
        macro_avg: Averaged {
            precision: 0.5 * (positive.precision + negative.precision),
            recall: 0.5 * (positive.recall + negative.recall),
            f1: 0.5 * (positive.f1 + negative.f1),
        },
        zero_division,
    }
}

pub fn evaluate(y_true: &[Class], y_pred: &[Class]) -> Result<Metrics> {
    Ok(metrics(&confusion(y_true, y_pred)?))
}
