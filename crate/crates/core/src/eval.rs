//! Detection metrics over labeled score sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// TPR@FPR levels reported by default.
pub const DEFAULT_FPR_LEVELS: [f64; 4] = [0.10, 0.01, 0.001, 0.0001];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    /// Statistics of watermarked sequences.
    pub positives: Vec<f64>,
    /// Statistics of unwatermarked sequences.
    pub negatives: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self { positives, negatives }
    }

    fn require_both(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::InvalidInput("score set needs both positives and negatives".into()));
        }
        if self.positives.iter().chain(&self.negatives).any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("scores must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub tpr: f64,
    pub fnr: f64,
}

fn frac_at_least(xs: &[f64], t: f64) -> f64 {
    xs.iter().filter(|&&x| x >= t).count() as f64 / xs.len() as f64
}

fn frac_above(xs: &[f64], t: f64) -> f64 {
    xs.iter().filter(|&&x| x > t).count() as f64 / xs.len() as f64
}

/// Rates with "score >= threshold" as the positive call.
pub fn confusion(scores: &ScoreSet, threshold: f64) -> Result<Confusion> {
    scores.require_both()?;
    if !threshold.is_finite() {
        return Err(Error::InvalidInput(format!("threshold must be finite, got {threshold}")));
    }
    let tpr = frac_at_least(&scores.positives, threshold);
    let fpr = frac_at_least(&scores.negatives, threshold);
    Ok(Confusion { threshold, fpr, tnr: 1.0 - fpr, tpr, fnr: 1.0 - tpr })
}

/// Decision cut chosen for a TPR@FPR level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Cut {
    /// Everything is flagged.
    All,
    /// Flag scores `>= value`.
    AtLeast(f64),
    /// Flag scores `> value` (just above the largest negative).
    Above(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub level: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub cut: Cut,
    /// Fewer than `10 / level` negatives back this level.
    pub under_resolved: bool,
}

/// TPR at the most permissive cut whose empirical FPR is within `level`.
///
/// Cuts are taken from the negatives only: flag everything, flag scores at
/// or above a negative score, or flag scores strictly above the largest
/// negative. The smallest admissible cut wins.
pub fn tpr_at_fpr(scores: &ScoreSet, levels: &[f64]) -> Result<Vec<TprAtFpr>> {
    scores.require_both()?;
    let mut negs = scores.negatives.clone();
    negs.sort_by(f64::total_cmp);
    negs.dedup();
    let max_neg = *negs.last().unwrap();
    levels
        .iter()
        .map(|&level| {
            if !(level > 0.0 && level <= 1.0) {
                return Err(Error::InvalidInput(format!("fpr level must lie in (0, 1], got {level}")));
            }
            let cut = if level >= 1.0 {
                Cut::All
            } else {
                negs.iter()
                    .copied()
                    .find(|&t| frac_at_least(&scores.negatives, t) <= level)
                    .map_or(Cut::Above(max_neg), Cut::AtLeast)
            };
            let (tpr, fpr) = match cut {
                Cut::All => (1.0, 1.0),
                Cut::AtLeast(t) => (frac_at_least(&scores.positives, t), frac_at_least(&scores.negatives, t)),
                Cut::Above(t) => (frac_above(&scores.positives, t), frac_above(&scores.negatives, t)),
            };
            let under_resolved = (scores.negatives.len() as f64) < 10.0 / level;
            Ok(TprAtFpr { level, tpr, fpr, cut, under_resolved })
        })
        .collect()
}

/// Area under the ROC curve as the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &ScoreSet) -> Result<f64> {
    scores.require_both()?;
    let mut all: Vec<(f64, bool)> =
        scores.positives.iter().map(|&s| (s, true)).chain(scores.negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of positive midranks
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let np = scores.positives.len() as f64;
    let nn = scores.negatives.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per distinct score (cut `>= score`), from strictest to loosest.
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    scores.require_both()?;
    let mut cuts: Vec<f64> = scores.positives.iter().chain(&scores.negatives).copied().collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    points.extend(cuts.into_iter().map(|t| RocPoint {
        threshold: t,
        fpr: frac_at_least(&scores.negatives, t),
        tpr: frac_at_least(&scores.positives, t),
    }));
    Ok(points)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        (bin as f64 / self.bins as f64, (bin + 1) as f64 / self.bins as f64)
    }

    pub fn mode_bin(&self) -> usize {
        self.counts.iter().enumerate().fold(0, |best, (i, &c)| if c > self.counts[best] { i } else { best })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.edges(i);
            writeln!(out, "{lo},{hi},{c}").unwrap();
        }
        out
    }
}

/// Equal-width histogram of window match ratios on [0, 1]; 1.0 lands in the top bin.
pub fn match_ratio_histogram(ratios: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    for &r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidInput(format!("match ratio {r} outside [0, 1]")));
        }
        counts[((r * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { bins, counts })
}

/// Pairs of adjacent levels where a looser FPR level reports a lower TPR.
pub fn monotonicity_anomalies(rows: &[(f64, f64)]) -> Vec<String> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .map(|w| format!("TPR {} at FPR {} is below TPR {} at stricter FPR {}", w[1].1, w[1].0, w[0].1, w[0].0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub positives: usize,
    pub negatives: usize,
    pub confusion: Vec<Confusion>,
    pub tpr_at_fpr: Vec<TprAtFpr>,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    pub anomalies: Vec<String>,
    /// Externally computed per-run values (e.g. perplexity) joined by the caller.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, serde_json::Value>,
}

pub fn evaluate(scores: &ScoreSet, thresholds: &[f64], levels: &[f64]) -> Result<EvalReport> {
    let confusion = thresholds.iter().map(|&t| confusion(scores, t)).collect::<Result<Vec<_>>>()?;
    let tpr_at_fpr = tpr_at_fpr(scores, levels)?;
    let mut anomalies = monotonicity_anomalies(&tpr_at_fpr.iter().map(|r| (r.level, r.tpr)).collect::<Vec<_>>());
    anomalies.extend(
        tpr_at_fpr
            .iter()
            .filter(|r| r.under_resolved)
            .map(|r| format!("FPR level {} is under-resolved by {} negatives", r.level, scores.negatives.len())),
    );
    Ok(EvalReport {
        positives: scores.positives.len(),
        negatives: scores.negatives.len(),
        confusion,
        tpr_at_fpr,
        auc: roc_auc(scores)?,
        histogram: None,
        anomalies,
        external: BTreeMap::new(),
    })
}
