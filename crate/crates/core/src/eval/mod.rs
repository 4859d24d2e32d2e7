//! Binary classification metrics with FAKE as the positive class.

mod figures;

pub use figures::{export_figures, FigureFormat, ModelSummary, FIGURE_METRICS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} labels vs {1} predictions")]
    Length(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("ROC AUC is undefined when only one class is present")]
    SingleClass,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("at least one report is required")]
    NoReports,
    #[error("figure output: {0}")]
    Io(#[from] std::io::Error),
    #[error("figure output: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `y_true` and `y_pred` hold targets (1 = FAKE).
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Length(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t != 0, p != 0) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// A metric value; undefined metrics (zero denominator) carry 0 and `defined = false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    pub const UNDEFINED: Metric = Metric {
        value: 0.0,
        defined: false,
    };

    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::UNDEFINED
        } else {
            Metric {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }
}

pub fn precision(cm: &ConfusionMatrix) -> Metric {
    Metric::ratio(cm.tp, cm.tp + cm.fp)
}

pub fn recall(cm: &ConfusionMatrix) -> Metric {
    Metric::ratio(cm.tp, cm.tp + cm.fn_)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Metric {
    Metric::ratio(cm.tp + cm.tn, cm.total())
}

/// Harmonic mean of precision and recall, as `2tp / (2tp + fp + fn)`;
/// undefined when either is, or when `tp = 0`.
pub fn f1(cm: &ConfusionMatrix) -> Metric {
    if !precision(cm).defined || !recall(cm).defined || cm.tp == 0 {
        return Metric::UNDEFINED;
    }
    Metric::ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_)
}

fn check_scores(y_true: &[u8], scores: &[f64]) -> Result<(usize, usize), EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::Length(y_true.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = y_true.iter().filter(|&&y| y != 0).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann-Whitney form of the area under the ROC curve; tied scores share their average rank.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    let (pos, neg) = check_scores(y_true, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if y_true[k] != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve through every distinct score threshold, from (0,0) to (1,1).
pub fn roc_curve(y_true: &[u8], scores: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check_scores(y_true, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve ordered by increasing false-positive rate.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

/// One evaluation of one model on one set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub backend: String,
    pub n: usize,
    pub threshold: f64,
    pub cm: ConfusionMatrix,
    pub accuracy: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub roc_auc: Metric,
    pub loss: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub macro_precision: Metric,
    pub macro_recall: Metric,
    pub macro_f1: Metric,
    #[serde(default)]
    pub roc_curve: Vec<RocPoint>,
}

fn mean_metric(a: Metric, b: Metric) -> Metric {
    if a.defined && b.defined {
        Metric {
            value: (a.value + b.value) / 2.0,
            defined: true,
        }
    } else {
        Metric::UNDEFINED
    }
}

impl MetricsReport {
    /// Thresholds `scores` (FAKE iff score >= threshold) and computes every metric.
    pub fn from_scores(
        model: &str,
        backend: &str,
        y_true: &[u8],
        scores: &[f64],
        threshold: f64,
    ) -> Result<Self, EvalError> {
        let y_pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let cm = confusion(y_true, &y_pred)?;
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        let (roc_auc, roc_curve) = match (roc_auc(y_true, scores), roc_curve(y_true, scores)) {
            (Ok(a), Ok(c)) => (
                Metric {
                    value: a,
                    defined: true,
                },
                c,
            ),
            _ => (Metric::UNDEFINED, Vec::new()),
        };
        let loss = y_true
            .iter()
            .zip(scores)
            .map(|(&y, &p)| crate::models::binary_cross_entropy(y, p))
            .sum::<f64>()
            / y_true.len() as f64;
        let mirrored = ConfusionMatrix {
            tp: cm.tn,
            fp: cm.fn_,
            fn_: cm.fp,
            tn: cm.tp,
        };
        let fake = ClassMetrics {
            precision: precision(&cm),
            recall: recall(&cm),
            f1: f1(&cm),
        };
        let real = ClassMetrics {
            precision: precision(&mirrored),
            recall: recall(&mirrored),
            f1: f1(&mirrored),
        };
        Ok(Self {
            model: model.to_string(),
            backend: backend.to_string(),
            n: y_true.len(),
            threshold,
            cm,
            accuracy: accuracy(&cm),
            precision: fake.precision,
            recall: fake.recall,
            f1: fake.f1,
            roc_auc,
            loss,
            macro_precision: mean_metric(fake.precision, real.precision),
            macro_recall: mean_metric(fake.recall, real.recall),
            macro_f1: mean_metric(fake.f1, real.f1),
            fake,
            real,
            roc_curve,
        })
    }
}
