//! Slice-level evaluation: rates, ROC AUC, and cross-fold t intervals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::confidence::ConfidenceTable;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Label};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies predictions `score >= threshold` against `labels`.
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

pub fn sensitivity(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::NoPositives);
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    if c.tn + c.fp == 0 {
        return Err(Error::NoNegatives);
    }
    Ok(c.tn as f64 / (c.tn + c.fp) as f64)
}

/// Mann-Whitney AUC: the share of (positive, negative) pairs where the
/// positive scores higher, ties counting one half.
///
/// Computed from mid-ranks in `O(n log n)`. The numerator is kept as an
/// integer count of half-pairs so the result is exact.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of positives, with tied groups sharing the mean rank.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mean doubled = i + j + 2
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        doubled_rank_sum += positives * (i + j + 2) as u64;
        i = j + 1;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Student-t cumulative distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`student_t_cdf`] by bisection, to a relative width of 1e-13.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Invalid(format!("quantile level {p} outside (0, 1)")));
    }
    if !(df > 0.0) {
        return Err(Error::Invalid(format!("degrees of freedom {df} must be positive")));
    }
    if p < 0.5 {
        return student_t_quantile(1.0 - p, df).map(|q| -q);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-fold values with their mean and a two-sided t interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl FoldSummary {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// `mean (low–high)` with `decimals` places, e.g. `0.948 (0.930–0.966)`.
    pub fn format(&self, decimals: usize) -> String {
        format!("{:.d$} ({:.d$}\u{2013}{:.d$})", self.mean, self.ci_low, self.ci_high, d = decimals)
    }
}

/// Mean ± t_{(1+level)/2, n-1} · s / sqrt(n), with `s` the sample deviation.
pub fn t_confidence_interval(values: &[f64], level: f64) -> Result<FoldSummary> {
    if values.len() < 2 {
        return Err(Error::TooFewValues(2));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("confidence level {level} outside (0, 1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite fold value".into()));
    }
    let n = values.len() as f64;
    if values.iter().all(|&v| v == values[0]) {
        let m = values[0];
        return Ok(FoldSummary { per_fold: values.to_vec(), mean: m, ci_low: m, ci_high: m });
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = student_t_quantile((1.0 + level) / 2.0, n - 1.0)?;
    let half = t * var.sqrt() / n.sqrt();
    Ok(FoldSummary { per_fold: values.to_vec(), mean, ci_low: mean - half, ci_high: mean + half })
}

/// One cross-validation fold, defined by its patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub id: String,
    pub patients: Vec<String>,
}

/// On-disk `{"folds": [...]}` document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldSet {
    pub folds: Vec<Fold>,
}

impl FoldSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in &self.folds {
            for p in &f.patients {
                if !seen.insert(p.as_str()) {
                    return Err(Error::Invalid(format!("patient {p} appears in more than one fold")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    pub id: String,
    pub slices: usize,
    pub counts: ConfusionCounts,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    /// Why a metric is missing for this fold, if any is.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(flatten)]
    pub summary: FoldSummary,
    pub formatted: String,
}

impl From<FoldSummary> for MetricSummary {
    fn from(summary: FoldSummary) -> Self {
        let formatted = summary.format(3);
        Self { summary, formatted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub level: f64,
    pub folds: Vec<FoldEvaluation>,
    pub auc: Option<MetricSummary>,
    pub tpr: Option<MetricSummary>,
    pub tnr: Option<MetricSummary>,
}

fn summarize(values: Vec<f64>, level: f64) -> Option<MetricSummary> {
    t_confidence_interval(&values, level).ok().map(MetricSummary::from)
}

/// Slice-level confusion, AUC and rates per fold, plus 95% summaries.
///
/// Only original records (variant 0) are scored. A fold whose slices are all
/// one class gets no AUC and a note instead of failing the whole run.
pub fn evaluate_patientwise(
    manifest: &DatasetManifest,
    scores: &ConfidenceTable,
    folds: &FoldSet,
    threshold: f64,
) -> Result<EvaluationReport> {
    folds.validate()?;
    let level = 0.95;
    let mut by_patient: BTreeMap<&str, Vec<(u32, bool)>> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.variant == 0) {
        by_patient.entry(r.patient_id.as_str()).or_default().push((r.slice_index, r.label == Label::Tumor));
    }

    let mut evaluations = Vec::with_capacity(folds.folds.len());
    for fold in &folds.folds {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for p in &fold.patients {
            let rows = by_patient.get(p.as_str()).ok_or_else(|| Error::Invalid(format!("fold {}: unknown patient {p}", fold.id)))?;
            for &(slice_index, label) in rows {
                let score = scores
                    .rows
                    .get(p)
                    .and_then(|m| m.get(&slice_index))
                    .ok_or_else(|| Error::MissingSlice { patient_id: p.clone(), slice_index })?;
                s.push(*score);
                l.push(label);
            }
        }
        let counts = ConfusionCounts::at_threshold(&s, &l, threshold);
        let mut notes = Vec::new();
        let mut keep = |r: Result<f64>, what: &str| match r {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("{what}: {e}"));
                None
            }
        };
        let auc = keep(roc_auc(&s, &l), "auc");
        let tpr = keep(sensitivity(&counts), "tpr");
        let tnr = keep(specificity(&counts), "tnr");
        evaluations.push(FoldEvaluation { id: fold.id.clone(), slices: s.len(), counts, auc, tpr, tnr, notes });
    }

    let collect = |f: fn(&FoldEvaluation) -> Option<f64>| evaluations.iter().filter_map(f).collect::<Vec<f64>>();
    let auc = summarize(collect(|e| e.auc), level);
    let tpr = summarize(collect(|e| e.tpr), level);
    let tnr = summarize(collect(|e| e.tnr), level);
    Ok(EvaluationReport { threshold, level, folds: evaluations, auc, tpr, tnr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{Record, Split};

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn rates() {
        let c = ConfusionCounts { tp: 3, fn_: 1, tn: 9, fp: 1 };
        assert_eq!(sensitivity(&c).unwrap(), 0.75);
        assert_eq!(specificity(&c).unwrap(), 0.9);
        assert_eq!(sensitivity(&ConfusionCounts { fn_: 5, ..Default::default() }).unwrap(), 0.0);
        assert_eq!(specificity(&ConfusionCounts { fp: 4, ..Default::default() }).unwrap(), 0.0);
        assert!(matches!(sensitivity(&ConfusionCounts::default()), Err(Error::NoPositives)));
        assert!(matches!(specificity(&ConfusionCounts::default()), Err(Error::NoNegatives)));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.7, 0.6, 0.2], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let scores = [0.1, 0.4, 0.4, 0.35, 0.8, 0.4, 0.1, 0.9];
        let labels = [false, true, false, true, true, true, true, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }

    #[test]
    fn t_quantiles_match_closed_forms() {
        // df = 2: t = (2p - 1) / sqrt(2 p (1 - p))
        for p in [0.6_f64, 0.9, 0.975, 0.995] {
            let exact = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
            assert!((student_t_quantile(p, 2.0).unwrap() - exact).abs() < 1e-9);
        }
        // df = 1 is Cauchy: t = tan(pi (p - 1/2))
        for p in [0.2, 0.75, 0.975] {
            let exact = (std::f64::consts::PI * (p - 0.5)).tan();
            assert!((student_t_quantile(p, 1.0).unwrap() - exact).abs() < 1e-9);
        }
        assert!((student_t_quantile(0.975, 4.0).unwrap() - 2.776445).abs() < 1e-6);
        assert!(student_t_quantile(1.0, 3.0).is_err());
    }

    #[test]
    fn interval_examples() {
        let s = t_confidence_interval(&[1.0, 2.0, 3.0], 0.95).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.half_width() - 2.4841).abs() < 1e-3);
        let z = t_confidence_interval(&[0.9; 5], 0.95).unwrap();
        assert_eq!((z.ci_low, z.mean, z.ci_high), (0.9, 0.9, 0.9));
        assert!(matches!(t_confidence_interval(&[1.0], 0.95), Err(Error::TooFewValues(2))));
    }

    #[test]
    fn formatting() {
        let s = FoldSummary { per_fold: vec![], mean: 0.948, ci_low: 0.930, ci_high: 0.966 };
        assert_eq!(s.format(3), "0.948 (0.930\u{2013}0.966)");
    }

    fn record(p: &str, i: u32, tumor: bool) -> Record {
        Record {
            patient_id: p.into(),
            slice_index: i,
            image_path: format!("{p}_{i}.png").into(),
            label: if tumor { Label::Tumor } else { Label::Healthy },
            split: Split::Test,
            variant: 0,
        }
    }

    #[test]
    fn patientwise_forced_fold_aucs() {
        // Each fold has two tumor and two healthy slices. Scores put the
        // tumors on top, except in odd folds where one tumor sits between
        // the healthy slices, giving 3 of 4 concordant pairs.
        let mut records = Vec::new();
        let mut table = ConfidenceTable::default();
        let mut folds = FoldSet::default();
        for f in 0..5 {
            let p = format!("p{f}");
            let s = if f % 2 == 1 { [0.9, 0.5, 0.6, 0.2] } else { [0.9, 0.8, 0.3, 0.2] };
            let labels = [true, true, false, false];
            for i in 0..4 {
                records.push(record(&p, i as u32, labels[i]));
                table.rows.entry(p.clone()).or_default().insert(i as u32, s[i]);
            }
            folds.folds.push(Fold { id: format!("f{f}"), patients: vec![p] });
        }
        let manifest = DatasetManifest::new(records).unwrap();
        let r = evaluate_patientwise(&manifest, &table, &folds, 0.5).unwrap();
        let aucs: Vec<f64> = r.folds.iter().map(|f| f.auc.unwrap()).collect();
        assert_eq!(aucs, vec![1.0, 0.75, 1.0, 0.75, 1.0]);
        assert!((r.auc.unwrap().summary.mean - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_class_fold_is_recorded() {
        let records = vec![record("a", 0, true), record("a", 1, true), record("b", 0, true), record("b", 1, false)];
        let mut table = ConfidenceTable::default();
        for (p, i, v) in [("a", 0, 0.9), ("a", 1, 0.8), ("b", 0, 0.7), ("b", 1, 0.1)] {
            table.rows.entry(p.to_string()).or_default().insert(i, v);
        }
        let folds = FoldSet {
            folds: vec![Fold { id: "0".into(), patients: vec!["a".into()] }, Fold { id: "1".into(), patients: vec!["b".into()] }],
        };
        let r = evaluate_patientwise(&DatasetManifest::new(records).unwrap(), &table, &folds, 0.5).unwrap();
        assert_eq!(r.folds[0].auc, None);
        assert!(!r.folds[0].notes.is_empty());
        assert_eq!(r.folds[1].auc, Some(1.0));
        assert!(r.auc.is_none());
    }
}
