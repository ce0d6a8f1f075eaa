//! Binary classification metrics for abnormality scores. Abnormal is the
//! positive class and a document is predicted abnormal when its score is
//! below the threshold.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &abnormal) in scores.iter().zip(labels) {
        match (s < threshold, abnormal) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Direction in which scores indicate the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Positive when `score < threshold`.
    #[default]
    LowerIsPositive,
    /// Positive when `score > threshold`.
    HigherIsPositive,
}

/// Cumulative (negatives, positives) predicted positive at each cut, tie
/// groups kept together. The first cut flags nothing, the last everything.
fn cuts(scores: &[f64], labels: &[bool], polarity: Polarity) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match polarity {
        Polarity::LowerIsPositive => order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
        Polarity::HigherIsPositive => order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
    }
    let mut out = Vec::with_capacity(order.len() + 1);
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut idx = 0;
    while idx < order.len() {
        let value = scores[order[idx]];
        out.push((value, fp, tp));
        while idx < order.len() && scores[order[idx]] == value {
            if labels[order[idx]] {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
    }
    let sentinel = match polarity {
        Polarity::LowerIsPositive => f64::INFINITY,
        Polarity::HigherIsPositive => f64::NEG_INFINITY,
    };
    out.push((sentinel, fp, tp));
    out
}

fn class_counts(labels: &[bool]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    (labels.len() as u64 - pos, pos)
}

/// ROC curve over every distinct score plus a sentinel that flags
/// everything. Point `i` uses threshold `t_i` with the polarity's rule.
pub fn roc_with(scores: &[f64], labels: &[bool], polarity: Polarity) -> Vec<RocPoint> {
    let (neg, pos) = class_counts(labels);
    cuts(scores, labels, polarity)
        .into_iter()
        .map(|(threshold, fp, tp)| RocPoint {
            threshold,
            fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
            tpr: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
        })
        .collect()
}

pub fn roc(scores: &[f64], labels: &[bool]) -> Vec<RocPoint> {
    roc_with(scores, labels, Polarity::LowerIsPositive)
}

/// Trapezoidal area under the ROC curve, computed in integer arithmetic
/// so that it equals the Mann–Whitney statistic with half credit for ties.
/// NaN when either class is empty.
pub fn auc_with(scores: &[f64], labels: &[bool], polarity: Polarity) -> f64 {
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return f64::NAN;
    }
    let c = cuts(scores, labels, polarity);
    let twice_area: u64 = c.windows(2).map(|w| (w[1].1 - w[0].1) * (w[1].2 + w[0].2)).sum();
    twice_area as f64 / (2 * neg * pos) as f64
}

pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    auc_with(scores, labels, Polarity::LowerIsPositive)
}

/// Scores paired with labels by document id, undefined scores removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub excluded: usize,
}

/// Joins scores and labels on document id. Every scored document needs a
/// label and vice versa; NaN scores are dropped and counted.
pub fn join_scores(scores: &[(usize, f64)], labels: &[(usize, bool)]) -> Result<Scored> {
    let mut by_id = std::collections::BTreeMap::new();
    for &(id, l) in labels {
        if by_id.insert(id, l).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate label for document {id}")));
        }
    }
    if by_id.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            by_id.len()
        )));
    }
    let mut out = Scored {
        scores: Vec::with_capacity(scores.len()),
        labels: Vec::with_capacity(scores.len()),
        excluded: 0,
    };
    for &(id, s) in scores {
        let l = *by_id
            .get(&id)
            .ok_or_else(|| Error::InvalidArgument(format!("document {id} has a score but no label")))?;
        if s.is_nan() {
            out.excluded += 1;
            continue;
        }
        out.scores.push(s);
        out.labels.push(l);
    }
    let (neg, pos) = class_counts(&out.labels);
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass(format!(
            "{pos} abnormal and {neg} normal documents after exclusions"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub auc: f64,
    pub n: usize,
    pub excluded: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "auc={:.6} n={} excluded={}", self.auc, self.n, self.excluded)
    }
}

pub fn summarize(scored: &Scored) -> Summary {
    Summary {
        auc: auc(&scored.scores, &scored.labels),
        n: scored.scores.len(),
        excluded: scored.excluded,
    }
}

pub fn write_roc(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        let t = if p.threshold == f64::INFINITY {
            "inf".to_string()
        } else if p.threshold == f64::NEG_INFINITY {
            "-inf".to_string()
        } else {
            format!("{:?}", p.threshold)
        };
        out.push_str(&format!("{t},{:?},{:?}\n", p.fpr, p.tpr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
