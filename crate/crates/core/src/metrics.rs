//! Informativeness metrics for scores: ROC/AUC, binned log-odds fit,
//! forward/reverse regressions, confusion matrices, reject inference and the
//! between/residual AUC decomposition.
//!
//! Throughout, the "good" outcome is non-default and a higher score is a
//! prediction of non-default.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], bad: &[bool]) -> Result<()> {
    if scores.len() != bad.len() {
        return Err(Error::Dimension {
            what: "outcomes",
            expected: scores.len(),
            got: bad.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    Ok(())
}

fn class_counts(bad: &[bool]) -> Result<(usize, usize)> {
    let n_bad = bad.iter().filter(|&&b| b).count();
    let n_good = bad.len() - n_bad;
    if n_bad == 0 || n_good == 0 {
        return Err(Error::UndefinedMetric("both default and non-default outcomes are required"));
    }
    Ok((n_good, n_bad))
}

/// Probability that a random non-defaulter outscores a random defaulter,
/// ties counted as one half. Mann–Whitney rank sum with midranks.
pub fn auc(scores: &[f64], bad: &[bool]) -> Result<f64> {
    check_lengths(scores, bad)?;
    let (n_good, n_bad) = class_counts(bad)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_good = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the average rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let goods = idx[i..=j].iter().filter(|&&k| !bad[k]).count();
        rank_sum_good += mid * goods as f64;
        i = j + 1;
    }
    let g = n_good as f64;
    let u = rank_sum_good - g * (g + 1.0) / 2.0;
    Ok(u / (g * n_bad as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// Applicants scoring at or above this value are admitted.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from (0,0) to (1,1). TPR is the share of non-defaulters admitted,
/// FPR the share of defaulters admitted.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoid area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    /// At most `max_points` points, always keeping the endpoints.
    pub fn thinned(&self, max_points: usize) -> RocCurve {
        let n = self.points.len();
        if n <= max_points || max_points < 2 {
            return self.clone();
        }
        let step = (n - 1) as f64 / (max_points - 1) as f64;
        let points = (0..max_points)
            .map(|i| self.points[((i as f64 * step).round() as usize).min(n - 1)])
            .collect();
        RocCurve { points }
    }
}

pub fn roc_curve(scores: &[f64], bad: &[bool]) -> Result<RocCurve> {
    check_lengths(scores, bad)?;
    let (n_good, n_bad) = class_counts(bad)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if bad[idx[i]] {
                fp += 1;
            } else {
                tp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_bad as f64,
            tpr: tp as f64 / n_good as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Weighted least-squares fit of bin log odds of default on bin score.
#[derive(Clone, Debug, PartialEq)]
pub struct LogOddsFit {
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
    pub bins_used: usize,
    pub bins_dropped: usize,
}

/// Bins scores to width-one integer bins (floor), computes each bin's default
/// share, drops bins whose share is exactly 0 or 1, then regresses bin log
/// odds on the bin score weighting by bin counts.
pub fn log_odds_r2(scores: &[f64], bad: &[bool]) -> Result<LogOddsFit> {
    check_lengths(scores, bad)?;
    let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for (&s, &b) in scores.iter().zip(bad) {
        let e = bins.entry(s.floor() as i64).or_insert((0.0, 0.0));
        e.0 += 1.0;
        if b {
            e.1 += 1.0;
        }
    }
    let total_bins = bins.len();
    let rows: Vec<(f64, f64, f64)> = bins
        .into_iter()
        .filter(|(_, (n, d))| *d > 0.0 && d < n)
        .map(|(k, (n, d))| {
            let pd = d / n;
            (k as f64, (pd / (1.0 - pd)).ln(), n)
        })
        .collect();
    let fit = weighted_line(&rows)?;
    Ok(LogOddsFit {
        r2: fit.2,
        slope: fit.0,
        intercept: fit.1,
        bins_used: rows.len(),
        bins_dropped: total_bins - rows.len(),
    })
}

/// Same fit on known per-applicant default probabilities instead of realized
/// outcomes; a bin's share is its mean probability.
pub fn log_odds_r2_expected(scores: &[f64], pd: &[f64]) -> Result<LogOddsFit> {
    if scores.len() != pd.len() {
        return Err(Error::Dimension {
            what: "probabilities",
            expected: scores.len(),
            got: pd.len(),
        });
    }
    let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for (&s, &p) in scores.iter().zip(pd) {
        let e = bins.entry(s.floor() as i64).or_insert((0.0, 0.0));
        e.0 += 1.0;
        e.1 += p;
    }
    let total_bins = bins.len();
    let rows: Vec<(f64, f64, f64)> = bins
        .into_iter()
        .filter(|(_, (n, d))| *d > 0.0 && d < n)
        .map(|(k, (n, d))| {
            let p = d / n;
            (k as f64, (p / (1.0 - p)).ln(), n)
        })
        .collect();
    let fit = weighted_line(&rows)?;
    Ok(LogOddsFit {
        r2: fit.2,
        slope: fit.0,
        intercept: fit.1,
        bins_used: rows.len(),
        bins_dropped: total_bins - rows.len(),
    })
}

/// (slope, intercept, weighted R²) of y on x with weights w.
fn weighted_line(rows: &[(f64, f64, f64)]) -> Result<(f64, f64, f64)> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 usable score bins, found {}",
            rows.len()
        )));
    }
    let sw: f64 = rows.iter().map(|r| r.2).sum();
    let mx = rows.iter().map(|r| r.2 * r.0).sum::<f64>() / sw;
    let my = rows.iter().map(|r| r.2 * r.1).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y, w) in rows {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("score bins have no spread".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((slope, my - slope * mx, r2))
}

/// OLS slope of score on the default indicator: mean score of defaulters minus
/// mean score of non-defaulters.
pub fn reverse_regression(scores: &[f64], bad: &[bool]) -> Result<f64> {
    check_lengths(scores, bad)?;
    class_counts(bad)?;
    let (mut sb, mut nb, mut sg, mut ng) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &b) in scores.iter().zip(bad) {
        if b {
            sb += s;
            nb += 1.0;
        } else {
            sg += s;
            ng += 1.0;
        }
    }
    Ok(sb / nb - sg / ng)
}

/// OLS slope of the default indicator on score (linear probability).
pub fn forward_regression(scores: &[f64], bad: &[bool]) -> Result<f64> {
    check_lengths(scores, bad)?;
    class_counts(bad)?;
    let n = scores.len() as f64;
    let ms = scores.iter().sum::<f64>() / n;
    let md = bad.iter().filter(|&&b| b).count() as f64 / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&s, &b) in scores.iter().zip(bad) {
        let dx = s - ms;
        sxy += dx * (f64::from(u8::from(b)) - md);
        sxx += dx * dx;
    }
    if sxx <= 0.0 {
        return Err(Error::UndefinedMetric("scores have no spread"));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion matrix with default as the positive class.
pub fn confusion(pred_bad: &[bool], actual_bad: &[bool]) -> Result<ConfusionMatrix> {
    if pred_bad.len() != actual_bad.len() {
        return Err(Error::Dimension {
            what: "actual outcomes",
            expected: pred_bad.len(),
            got: actual_bad.len(),
        });
    }
    if pred_bad.is_empty() {
        return Err(Error::arg("confusion matrix needs at least one observation"));
    }
    let mut m = ConfusionMatrix {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &a) in pred_bad.iter().zip(actual_bad) {
        match (p, a) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// True positive rate among rejected applicants, reconstructed by mixing the
/// accepted-sample TPRs conditional on a proxy outcome (default on another
/// credit product) with the proxy-default share among rejects.
pub fn reject_inference_tpr(tpr_with_proxy_default: f64, tpr_without_proxy_default: f64, reject_proxy_default_share: f64) -> Result<f64> {
    for (name, v) in [
        ("tpr with proxy default", tpr_with_proxy_default),
        ("tpr without proxy default", tpr_without_proxy_default),
        ("reject proxy default share", reject_proxy_default_share),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::arg(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let s = reject_proxy_default_share;
    Ok(s * tpr_with_proxy_default + (1.0 - s) * tpr_without_proxy_default)
}

/// One mutually exclusive sub-sample with each group's AUC and population share.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct DecompositionCell {
    pub label: String,
    pub auc_a: f64,
    pub auc_b: f64,
    pub share_a: f64,
    pub share_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AucDecomposition {
    pub total: f64,
    pub between: f64,
    pub residual: f64,
    pub average_a: f64,
    pub average_b: f64,
}

const SHARE_TOL: f64 = 1e-9;

/// Rescales each group's shares to sum to one, for tables whose shares are rounded
/// or omit small categories.
pub fn normalize_shares(cells: &[DecompositionCell]) -> Vec<DecompositionCell> {
    let sa: f64 = cells.iter().map(|c| c.share_a).sum();
    let sb: f64 = cells.iter().map(|c| c.share_b).sum();
    cells
        .iter()
        .map(|c| DecompositionCell {
            share_a: c.share_a / sa,
            share_b: c.share_b / sb,
            ..c.clone()
        })
        .collect()
}

/// Splits the gap in share-weighted AUC between groups into a between-cell
/// part (share difference times the cell's average AUC) and a residual part
/// (AUC difference times the cell's average share).
pub fn auc_decomposition(cells: &[DecompositionCell]) -> Result<AucDecomposition> {
    if cells.is_empty() {
        return Err(Error::Validation("no decomposition cells".into()));
    }
    for c in cells {
        for v in [c.share_a, c.share_b] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("cell {}: share {v} outside [0, 1]", c.label)));
            }
        }
        for v in [c.auc_a, c.auc_b] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("cell {}: AUC {v} outside [0, 1]", c.label)));
            }
        }
    }
    let sa: f64 = cells.iter().map(|c| c.share_a).sum();
    let sb: f64 = cells.iter().map(|c| c.share_b).sum();
    if (sa - 1.0).abs() > SHARE_TOL || (sb - 1.0).abs() > SHARE_TOL {
        return Err(Error::Validation(format!("shares must sum to 1 per group, got {sa} and {sb}")));
    }
    let average_a: f64 = cells.iter().map(|c| c.share_a * c.auc_a).sum();
    let average_b: f64 = cells.iter().map(|c| c.share_b * c.auc_b).sum();
    let between = cells
        .iter()
        .map(|c| (c.share_a - c.share_b) * (c.auc_a + c.auc_b) / 2.0)
        .sum();
    let residual = cells
        .iter()
        .map(|c| (c.auc_a - c.auc_b) * (c.share_a + c.share_b) / 2.0)
        .sum();
    Ok(AucDecomposition {
        total: average_a - average_b,
        between,
        residual,
        average_a,
        average_b,
    })
}

#[derive(Serialize)]
struct DecompositionRow<'a> {
    cell: &'a str,
    auc_a: f64,
    auc_b: f64,
    auc_diff: f64,
    share_a: f64,
    share_b: f64,
    share_diff: f64,
}

/// Table layout: one row per cell, then average/between/residual summary rows.
pub fn write_decomposition_csv<W: Write>(cells: &[DecompositionCell], d: &AucDecomposition, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(DecompositionRow {
            cell: &c.label,
            auc_a: c.auc_a,
            auc_b: c.auc_b,
            auc_diff: c.auc_a - c.auc_b,
            share_a: c.share_a,
            share_b: c.share_b,
            share_diff: c.share_a - c.share_b,
        })?;
    }
    w.write_record(["average", &d.average_a.to_string(), &d.average_b.to_string(), &d.total.to_string(), "", "", ""])?;
    w.write_record(["between", &d.between.to_string(), "", "", "", "", ""])?;
    w.write_record(["residual", &d.residual.to_string(), "", "", "", "", ""])?;
    w.flush()?;
    Ok(())
}
