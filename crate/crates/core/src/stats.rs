//! Evaluation statistics: linear and rank correlations, pairwise ranking
//! accuracy, and the list-wise ranking consistency over distortion levels.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::metrics::Orientation;

fn check_pairs(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("{} ground-truth values vs {} predictions", y.len(), y_hat.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if y.iter().chain(y_hat).any(|v| v.is_nan()) {
        return Err(Error::NonFinite { context: "correlation input".into() });
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pairs(y, y_hat)?;
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "correlation input".into() });
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = y_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks. Without
/// ties this equals `1 - 6 sum(d^2) / (N (N^2 - 1))`.
pub fn srcc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pairs(y, y_hat)?;
    plcc(&average_ranks(y), &average_ranks(y_hat))
}

/// Counts pairs that are out of order in `v` (strict inversions) while sorting it.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf.push(v[i]);
            i += 1;
        } else {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Sum of `t (t - 1) / 2` over runs of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut prev: Option<T> = None;
    let mut run = 0u64;
    for x in sorted {
        if prev.as_ref() == Some(&x) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
            prev = Some(x);
        }
    }
    total + run * run.saturating_sub(1) / 2
}

/// Kendall rank correlation `2 (N_c - N_d) / (N (N - 1))`, with tied pairs
/// counted as neither concordant nor discordant. O(N log N).
pub fn krcc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pairs(y, y_hat)?;
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| y[i].total_cmp(&y[j]).then(y_hat[i].total_cmp(&y_hat[j])));
    let tied_x = tied_pairs(idx.iter().map(|&i| y[i]));
    let tied_xy = tied_pairs(idx.iter().map(|&i| (y[i], y_hat[i])));
    let mut v: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
    let discordant = merge_count(&mut v, &mut Vec::with_capacity(n));
    let tied_y = tied_pairs(v.iter().copied());
    let total = (n as u64) * (n as u64 - 1) / 2;
    let concordant = total + tied_xy - tied_x - tied_y - discordant;
    Ok((concordant as f64 - discordant as f64) / total as f64)
}

/// Confusion counts of pairwise decisions, with "first member better" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// From `(predicted_first_better, truly_first_better)` decisions.
    pub fn from_decisions(decisions: &[(bool, bool)]) -> Self {
        let mut c = Self::default();
        for &(pred, truth) in decisions {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(TP + TN) / (TP + TN + FP + FN)`.
    pub fn accuracy(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::InvalidArgument("no decisions".into()));
        }
        Ok((self.tp + self.tn) as f64 / self.total() as f64)
    }
}

pub fn ranking_accuracy(decisions: &[(bool, bool)]) -> Result<f64> {
    ConfusionCounts::from_decisions(decisions).accuracy()
}

/// Predicted scores of one content under one distortion kind across its levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCell {
    pub content: String,
    pub distortion: String,
    pub levels: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Mean over (content, distortion) cells of the SRCC between distortion level
/// and quality degradation. Scores are first mapped to quality by `orientation`,
/// so a perfectly monotone metric scores 1 and a perfectly reversed one -1.
pub fn l_test(cells: &[LevelCell], orientation: Orientation) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no cells".into()));
    }
    let contents: BTreeSet<&str> = cells.iter().map(|c| c.content.as_str()).collect();
    let kinds: BTreeSet<&str> = cells.iter().map(|c| c.distortion.as_str()).collect();
    let mut by_key: BTreeMap<(&str, &str), &LevelCell> = BTreeMap::new();
    for c in cells {
        if by_key.insert((&c.content, &c.distortion), c).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate cell ({}, {})", c.content, c.distortion)));
        }
    }
    let missing: Vec<String> = contents
        .iter()
        .flat_map(|m| kinds.iter().map(move |k| (*m, *k)))
        .filter(|key| !by_key.contains_key(key))
        .map(|(m, k)| format!("({m}, {k})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    let mut sum = 0.0;
    for c in by_key.values() {
        let degradation: Vec<f64> = c.scores.iter().map(|&s| -orientation.as_quality(s)).collect();
        sum += srcc(&c.levels, &degradation)?;
    }
    Ok(sum / by_key.len() as f64)
}
