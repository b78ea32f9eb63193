//! Binary classification metrics, ROC analysis, temperature scaling and
//! threshold selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AUC is undefined: cohort lacks a positive or a negative")]
    UndefinedAuc,
    #[error("calibration needs both classes")]
    DegenerateLogits,
    #[error("empty cohort")]
    EmptyCohort,
    #[error("logits and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub y: u8,
    /// Ranking score (typically the fused logit).
    pub score: f64,
    /// Calibrated probability.
    pub prob: f64,
}

/// One entry per subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredCohort {
    pub items: Vec<Scored>,
}

impl ScoredCohort {
    pub fn new(items: Vec<Scored>) -> Self {
        Self { items }
    }

    /// Cohort whose scores are the logits and probabilities their sigmoid
    /// at temperature `t`.
    pub fn from_logits(logits: &[f64], labels: &[u8], t: f64) -> Self {
        Self {
            items: logits
                .iter()
                .zip(labels)
                .map(|(&l, &y)| Scored { y, score: l, prob: sigmoid(l / t) })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|s| s.y == 1).count()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Swaps the roles of the two classes.
    pub fn flipped(&self) -> Self {
        Self { tp: self.tn, tn: self.tp, fp: self.fn_, fn_: self.fp }
    }
}

/// Predicts 1 iff `prob >= threshold`.
pub fn confusion(cohort: &ScoredCohort, threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for s in &cohort.items {
        match (s.prob >= threshold, s.y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn basic_rates(cm: &ConfusionMatrix) -> Rates {
    let mut d = false;
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), &mut d);
    let tpr = ratio(cm.tp, cm.tp + cm.fn_, &mut d);
    let tnr = ratio(cm.tn, cm.tn + cm.fp, &mut d);
    let fpr = ratio(cm.fp, cm.fp + cm.tn, &mut d);
    let precision = ratio(cm.tp, cm.tp + cm.fp, &mut d);
    Rates { accuracy, tpr, tnr, fpr, precision, recall: tpr, degenerate: d }
}

/// F1 of the positive class from precision and recall; 0 when both are 0.
fn f1_positive(cm: &ConfusionMatrix) -> f64 {
    let r = basic_rates(cm);
    if r.precision + r.recall > 0.0 {
        2.0 * r.precision * r.recall / (r.precision + r.recall)
    } else {
        0.0
    }
}

/// Mean of the class-1 and class-0 F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    (f1_positive(cm) + f1_positive(&cm.flipped())) / 2.0
}

/// Mann-Whitney estimate on `score`: the fraction of positive/negative pairs
/// ranked correctly, ties counting one half.
pub fn roc_auc(cohort: &ScoredCohort) -> Result<f64> {
    let pos = cohort.positives() as u64;
    let neg = cohort.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::UndefinedAuc);
    }
    let mut v: Vec<(f64, u8)> = cohort.items.iter().map(|s| (s.score, s.y)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the number of correctly ordered pairs, exact in integers
    let (mut twice, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].0 == v[i].0 {
            j += 1;
        }
        let p = v[i..j].iter().filter(|e| e.1 == 1).count() as u128;
        let n = (j - i) as u128 - p;
        twice += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

pub fn brier(cohort: &ScoredCohort) -> Result<f64> {
    if cohort.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let s: f64 = cohort.items.iter().map(|s| (s.prob - s.y as f64).powi(2)).sum();
    Ok(s / cohort.len() as f64)
}

/// Mean binary cross-entropy of `sigmoid(logit / t)`.
pub fn logit_nll(logits: &[f64], labels: &[u8], t: f64) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            // log(1 + e^{-z}) for y = 1 and log(1 + e^{z}) for y = 0
            let z = if y == 1 { l / t } else { -l / t };
            softplus(-z)
        })
        .sum();
    s / logits.len() as f64
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);

/// Golden-section search of the NLL-optimal temperature over `log T` in
/// `[ln 0.05, ln 20]`. Returns 1 when the optimum does not improve on it.
pub fn temperature_scale(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(logits.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(MetricsError::DegenerateLogits);
    }
    let f = |u: f64| logit_nll(logits, labels, u.exp());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-7 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let t = ((a + b) / 2.0).exp();
    if logit_nll(logits, labels, t) < logit_nll(logits, labels, 1.0) {
        Ok(t)
    } else {
        Ok(1.0)
    }
}

/// Threshold maximizing Youden's J over midpoints between distinct
/// probabilities. Ties go to the candidate nearest 0.5; with no candidate
/// or no positive J the result is 0.5.
pub fn select_threshold(cohort: &ScoredCohort) -> f64 {
    let mut probs: Vec<f64> = cohort.items.iter().map(|s| s.prob).collect();
    probs.sort_by(f64::total_cmp);
    probs.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in probs.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let r = basic_rates(&confusion(cohort, t));
        let j = r.tpr - r.fpr;
        let better = match best {
            None => true,
            Some((bj, bt)) => j > bj || (j == bj && (t - 0.5).abs() < (bt - 0.5).abs()),
        };
        if better {
            best = Some((j, t));
        }
    }
    match best {
        Some((j, t)) if j > 0.0 => t,
        _ => 0.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC operating points at every distinct score, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(cohort: &ScoredCohort) -> Result<Vec<RocPoint>> {
    let pos = cohort.positives() as f64;
    let neg = cohort.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::UndefinedAuc);
    }
    let mut v: Vec<(f64, u8)> = cohort.items.iter().map(|s| (s.score, s.y)).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < v.len() {
        let t = v[i].0;
        while i < v.len() && v[i].0 == t {
            if v[i].1 == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push(RocPoint { threshold: t, fpr: fp / neg, tpr: tp / pos });
    }
    Ok(pts)
}

/// Trapezoidal area under [`roc_curve`].
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsReport {
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub brier: f64,
    pub confusion: ConfusionMatrix,
    pub threshold: f64,
    pub temperature: f64,
}

/// Metric report at a fixed threshold; `temperature` is recorded as given.
pub fn report(cohort: &ScoredCohort, threshold: f64, temperature: f64) -> Result<ClsReport> {
    let cm = confusion(cohort, threshold);
    Ok(ClsReport {
        roc_auc: roc_auc(cohort).ok(),
        accuracy: basic_rates(&cm).accuracy,
        macro_f1: macro_f1(&cm),
        brier: brier(cohort)?,
        confusion: cm,
        threshold,
        temperature,
    })
}
