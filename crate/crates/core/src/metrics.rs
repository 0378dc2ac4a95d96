//! Binary classification metrics with fake as the positive class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub n: usize,
    #[serde(flatten)]
    pub counts: Confusion,
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::Metric(format!("labels must be 0 or 1, found {l}"))),
        None => Ok(()),
    }
}

pub fn confusion_counts(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    check_labels(preds)?;
    check_labels(labels)?;
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(hit: usize, false_pos: usize, false_neg: usize) -> ClassMetrics {
    let precision = ratio(hit, hit + false_pos);
    let recall = ratio(hit, hit + false_neg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
    }
}

/// Per-class precision, recall and F1; zero denominators give 0.
pub fn prf1(c: &Confusion) -> Prf1 {
    Prf1 {
        accuracy: ratio(c.tp + c.tn, c.total()),
        fake: class_metrics(c.tp, c.fp, c.fn_),
        real: class_metrics(c.tn, c.fn_, c.fp),
    }
}

/// Area under the ROC curve from rank sums, with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC undefined: need both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // ranks are 1-based; a tie run spanning ranks i+1..=j gets (i+1+j)/2
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += midrank * positives as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

impl MetricsRecord {
    /// Thresholds `scores` at 0.5 and computes every metric.
    pub fn from_scores(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let counts = confusion_counts(&preds, labels)?;
        let m = prf1(&counts);
        let both = labels.contains(&0) && labels.contains(&1);
        let auc = if both {
            Some(auc(scores, labels)?)
        } else {
            None
        };
        Ok(Self {
            n: counts.total(),
            counts,
            accuracy: m.accuracy,
            fake: m.fake,
            real: m.real,
            auc,
        })
    }

    pub const CSV_HEADER: &'static str =
        "n,tp,fp,tn,fn,accuracy,fake_precision,fake_recall,fake_f1,real_precision,real_recall,real_f1,auc";

    pub fn csv_row(&self) -> String {
        let c = &self.counts;
        let auc = self.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{auc}",
            self.n,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            self.accuracy,
            self.fake.precision,
            self.fake.recall,
            self.fake.f1,
            self.real.precision,
            self.real.recall,
            self.real.f1,
        )
    }
}
