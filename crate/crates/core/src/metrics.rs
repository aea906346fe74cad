//! Evaluation math: graded-relevance DCG/NDCG@k, micro/macro/weighted F1,
//! Spearman's rho and mean ± sample standard deviation over repeated runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty prediction set")]
    EmptyPredictions,
    #[error("empty value list")]
    EmptyValues,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("relevance grade {0} outside 0..=5")]
    GradeOutOfRange(u8),
}

pub const MAX_GRADE: u8 = 5;

/// Relevance grades of one grammar's list, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedRanking {
    pub grammar_id: String,
    pub relevances_in_rank_order: Vec<u8>,
}

impl JudgedRanking {
    pub fn new(grammar_id: impl Into<String>, rels: Vec<u8>) -> Result<Self, MetricsError> {
        if let Some(&g) = rels.iter().find(|&&g| g > MAX_GRADE) {
            return Err(MetricsError::GradeOutOfRange(g));
        }
        Ok(Self {
            grammar_id: grammar_id.into(),
            relevances_in_rank_order: rels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainVariant {
    /// gain = rel
    #[default]
    Linear,
    /// gain = 2^rel − 1
    Exponential,
}

impl GainVariant {
    pub fn gain(self, rel: u8) -> f64 {
        match self {
            GainVariant::Linear => f64::from(rel),
            GainVariant::Exponential => 2f64.powi(i32::from(rel)) - 1.0,
        }
    }
}

impl FromStr for GainVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(GainVariant::Linear),
            "exp" | "exponential" => Ok(GainVariant::Exponential),
            other => Err(format!(
                "unknown gain variant {other:?} (expected linear|exp)"
            )),
        }
    }
}

impl fmt::Display for GainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainVariant::Linear => "linear",
            GainVariant::Exponential => "exp",
        })
    }
}

/// `Σ_{i=1..min(k,n)} gain(rel_i) / log2(i+1)`
pub fn dcg_at_k(rels: &[u8], k: usize, gain: GainVariant) -> f64 {
    rels.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain.gain(r) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k, or `None` when the ideal DCG is zero (no relevant item in the list).
pub fn ndcg_at_k(ranking: &JudgedRanking, k: usize, gain: GainVariant) -> Option<f64> {
    let rels = &ranking.relevances_in_rank_order;
    let mut ideal = rels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k, gain);
    if idcg == 0.0 {
        return None;
    }
    Some(dcg_at_k(rels, k, gain) / idcg)
}

pub type NdcgCurve = Vec<(usize, Option<f64>)>;

/// NDCG@k for k = 1..=k_max, computed incrementally.
pub fn ndcg_curve(ranking: &JudgedRanking, k_max: usize, gain: GainVariant) -> NdcgCurve {
    let rels = &ranking.relevances_in_rank_order;
    let mut ideal = rels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut dcg = 0.0;
    let mut idcg = 0.0;
    (1..=k_max)
        .map(|k| {
            if let Some(&r) = rels.get(k - 1) {
                let discount = ((k + 1) as f64).log2();
                dcg += gain.gain(r) / discount;
                idcg += gain.gain(ideal[k - 1]) / discount;
            }
            (k, (idcg != 0.0).then(|| dcg / idcg))
        })
        .collect()
}

/// Pointwise mean over the defined values at each k. Undefined points are
/// skipped with a warning; a k where every curve is undefined stays `None`.
pub fn mean_curve(curves: &[NdcgCurve]) -> NdcgCurve {
    let k_max = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut warned = false;
    (1..=k_max)
        .map(|k| {
            let defined: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.get(k - 1).and_then(|p| p.1))
                .collect();
            if defined.len() < curves.len() && !warned {
                log::warn!(
                    "{} of {} rankings have undefined NDCG (all-zero judgments); excluded from the mean",
                    curves.len() - defined.len(),
                    curves.len()
                );
                warned = true;
            }
            let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            (k, mean)
        })
        .collect()
}

/// Mean of the defined values, or `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} undefined NDCG values excluded from the mean");
    }
    (n > 0).then(|| sum / n as f64)
}

/// A single-label prediction; unparseable or failed responses are `Error`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicted {
    Label(String),
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub items: Vec<(String, Predicted)>,
    pub label_domain: Vec<String>,
}

impl PredictionSet {
    pub fn new(label_domain: Vec<String>) -> Self {
        Self {
            items: Vec::new(),
            label_domain,
        }
    }

    pub fn push(&mut self, gold: impl Into<String>, predicted: Predicted) {
        self.items.push((gold.into(), predicted));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub micro: f64,
    pub macro_f1: f64,
    pub weighted: f64,
    pub accuracy: f64,
    pub per_class: BTreeMap<String, ClassScores>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro, macro and support-weighted F1 plus accuracy.
///
/// Per-class scores cover the labels occurring in the gold column; classes
/// without gold support take no part in macro/weighted averages. Error
/// predictions form a reserved class that matches no gold label. Micro F1
/// is `2TP / (2TP + FP + FN)` pooled over all classes, which for complete
/// single-label sets is accuracy.
pub fn f1_report(preds: &PredictionSet) -> Result<F1Report, MetricsError> {
    let n = preds.items.len();
    if n == 0 {
        return Err(MetricsError::EmptyPredictions);
    }
    let classes: BTreeSet<&str> = preds.items.iter().map(|(g, _)| g.as_str()).collect();
    let mut per_class = BTreeMap::new();
    let mut total_tp = 0usize;
    for &class in &classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (gold, pred) in &preds.items {
            let hit = matches!(pred, Predicted::Label(p) if p == class);
            match (gold == class, hit) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        total_tp += tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        per_class.insert(
            class.to_string(),
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: tp + fn_,
            },
        );
    }
    // Micro averaging pools counts over every predicted class too, including
    // labels absent from gold and the reserved error class.
    let correct = preds
        .items
        .iter()
        .filter(|(g, p)| matches!(p, Predicted::Label(l) if l == g))
        .count();
    let (mut micro_tp, mut micro_fp, mut micro_fn) = (0usize, 0usize, 0usize);
    for (gold, pred) in &preds.items {
        if matches!(pred, Predicted::Label(l) if l == gold) {
            micro_tp += 1;
        } else {
            micro_fp += 1;
            micro_fn += 1;
        }
    }
    debug_assert_eq!(micro_tp, total_tp);
    let micro = (2 * micro_tp) as f64 / (2 * micro_tp + micro_fp + micro_fn) as f64;
    let accuracy = ratio(correct, n);
    let macro_f1 = per_class.values().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let weighted = per_class
        .values()
        .map(|c| c.f1 * c.support as f64)
        .sum::<f64>()
        / n as f64;
    Ok(F1Report {
        micro,
        macro_f1,
        weighted,
        accuracy,
        per_class,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's rank correlation. Uses `1 − 6Σd²/(n(n²−1))` without ties and
/// Pearson correlation of average ranks otherwise. NaN if either side is
/// constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort(x.len()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let has_ties = |r: &[f64]| {
        r.iter().any(|v| v.fract() != 0.0) || {
            let set: BTreeSet<u64> = r.iter().map(|v| v.to_bits()).collect();
            set.len() < r.len()
        }
    };
    if has_ties(&rx) || has_ties(&ry) {
        return Ok(pearson(&rx, &ry));
    }
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    pub sample_std: f64,
    pub n_runs: usize,
}

impl fmt::Display for RunStats {
    /// `m ± s` with four decimals for repeated runs, plain `m` otherwise.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.n_runs > 1 {
            write!(f, "{:.4} ± {:.4}", self.mean, self.sample_std)
        } else {
            write!(f, "{:.4}", self.mean)
        }
    }
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one value).
pub fn run_stats(values: &[f64]) -> Result<RunStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyValues);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sample_std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(RunStats {
        mean,
        sample_std,
        n_runs: n,
    })
}
