//! Binary-classifier metrics over harmfulness scores: F1 at a threshold,
//! rank-based ROC-AUC with half-credit ties, threshold calibration, and the
//! relative capability score.
//!
//! Harmful is the positive class throughout; F1 is plain binary F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn precision(&self) -> f64 {
        let denom = self.true_pos + self.false_pos;
        if denom == 0 {
            0.0
        } else {
            self.true_pos as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.true_pos + self.false_neg;
        if denom == 0 {
            0.0
        } else {
            self.true_pos as f64 / denom as f64
        }
    }

    /// Harmonic mean of precision and recall; 0 when the denominator
    /// degenerates (e.g. no positive predictions).
    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// None when the input holds a single class (AUC undefined).
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_score: Option<f64>,
    pub tau_used: f64,
    pub n: usize,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "precision,recall,f1,auc,rel_score,tau,n";

    /// One CSV row; empty cells for absent optional fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{:.6},{:.6},{:.6},{},{},{:.12},{}",
            self.precision,
            self.recall,
            self.f1,
            opt(self.auc),
            opt(self.rel_score),
            self.tau_used,
            self.n
        )
    }
}

fn report_from_counts(counts: ConfusionCounts, auc: Option<f64>, tau: f64) -> MetricsReport {
    MetricsReport {
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        auc,
        rel_score: None,
        tau_used: tau,
        n: counts.total(),
        counts,
    }
}

fn counts_of(preds: impl Iterator<Item = (bool, bool)>) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (predicted, actual) in preds {
        match (predicted, actual) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    c
}

/// Confusion-matrix metrics over already-thresholded decisions. Labels are
/// 0 = benign, 1 = harmful; every decision must share the same tau.
pub fn f1_at_threshold(decisions: &[(Decision, u8)]) -> Result<MetricsReport> {
    if decisions.is_empty() {
        return Err(Error::EmptyScores);
    }
    for (_, label) in decisions {
        if *label > 1 {
            return Err(Error::InvalidLabel(*label));
        }
    }
    let tau = decisions[0].0.tau;
    let counts = counts_of(decisions.iter().map(|(d, l)| (d.harmful, *l == 1)));
    let scores: Vec<(f64, u8)> = decisions.iter().map(|(d, l)| (d.score.s, *l)).collect();
    Ok(report_from_counts(counts, auc(&scores).ok(), tau))
}

/// Same metrics from raw (score, label) pairs thresholded at `tau`
/// (harmful iff s > tau).
pub fn f1_for_scores(scores: &[(f64, u8)], tau: f64) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let counts = counts_of(scores.iter().map(|&(s, l)| (s > tau, l == 1)));
    Ok(report_from_counts(counts, auc(scores).ok(), tau))
}

/// Rank-based (Mann-Whitney) AUC: the probability that a uniformly random
/// positive outscores a uniformly random negative, ties counting 1/2.
/// Depends on score values only through their ordering, so it is exactly
/// invariant under strictly increasing transforms.
pub fn auc(scores: &[(f64, u8)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|&&(_, l)| l == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).unwrap());

    // average ranks over tie groups, then the rank-sum statistic
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if scores[idx].1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Sweep tau over midpoints between consecutive distinct sorted scores plus
/// below-min and above-max sentinels; return the F1-maximizing tau, ties
/// broken toward the larger tau (fewer harmful verdicts).
pub fn calibrate_tau(scores: &[(f64, u8)]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n_pos = scores.iter().filter(|&&(_, l)| l == 1).count();
    if n_pos == 0 || n_pos == scores.len() {
        return Err(Error::SingleClass);
    }
    let mut distinct: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - 1.0);
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    let mut best_tau = candidates[0];
    let mut best_f1 = -1.0;
    for &tau in &candidates {
        let f1 = f1_for_scores(scores, tau)?.f1;
        if f1 > best_f1 || (f1 == best_f1 && tau > best_tau) {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

/// Relative capability: a method's F1 over the same model's prompt-based
/// upper-bound F1. Conventionally displayed x100.
pub fn rel_score(m: f64, m_upper: f64) -> Result<f64> {
    if m_upper <= 0.0 {
        return Err(Error::NonPositiveUpperBound(m_upper));
    }
    Ok(m / m_upper)
}

/// One point on the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points swept over the same candidate thresholds as calibration,
/// ordered by increasing false-positive rate, with the (0,0) and (1,1)
/// endpoints included.
pub fn roc_points(scores: &[(f64, u8)]) -> Result<Vec<RocPoint>> {
    let n_pos = scores.iter().filter(|&&(_, l)| l == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut distinct: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[distinct.len() - 1] + 1.0);
    for w in distinct.windows(2).rev() {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(distinct[0] - 1.0);

    let mut points = Vec::with_capacity(thresholds.len());
    for tau in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for &(s, l) in scores {
            if s > tau {
                if l == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push(RocPoint {
            threshold: tau,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}
