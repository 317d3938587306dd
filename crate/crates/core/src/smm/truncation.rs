use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Score window kept when matching moments; scores outside `[lower, upper]`
/// are trimmed. Untruncated windows use infinite bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub lower: f64,
    pub upper: f64,
    pub trimmed_mass: f64,
}

impl TruncationSpec {
    pub fn new(lower: f64, upper: f64, trimmed_mass: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::param(format!("truncation needs lower < upper, got [{lower}, {upper}]")));
        }
        if !(0.0..1.0).contains(&trimmed_mass) {
            return Err(Error::param(format!("trimmed mass {trimmed_mass} outside [0, 1)")));
        }
        Ok(Self { lower, upper, trimmed_mass })
    }

    pub fn none() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            trimmed_mass: 0.0,
        }
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.lower && score <= self.upper
    }
}

/// Normal law truncated to `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormal {
    pub loc: f64,
    pub scale: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    /// Location at the sample median, scale from the 84th percentile less the
    /// median (one standard deviation for an untruncated normal sample).
    pub fn from_sample(sorted: &[f64], lower: f64, upper: f64) -> Result<Self> {
        let loc = quantile(sorted, 0.5);
        let scale = quantile(sorted, 0.84) - loc;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Numerical("benchmark scale is zero: sample has no spread above its median".into()));
        }
        Ok(Self { loc, scale, lower, upper })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal::truncated_cdf(x, self.loc, self.scale, self.lower, self.upper)
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Cramér–von Mises distance between sorted data and a benchmark CDF:
/// `1/(12n) + sum_i ((2i - 1)/(2n) - F(x_(i)))²`.
pub fn cvm_statistic(sorted: &[f64], benchmark: &TruncatedNormal) -> Result<f64> {
    let n = sorted.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 observations, got {n}")));
    }
    if !(benchmark.scale > 0.0) {
        return Err(Error::Numerical("benchmark scale must be positive".into()));
    }
    let nf = n as f64;
    let t = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let e = (2 * i + 1) as f64 / (2.0 * nf) - benchmark.cdf(x);
            e * e
        })
        .sum::<f64>();
    Ok(1.0 / (12.0 * nf) + t)
}

/// Per-tail trim shares searched, 0% to 10% in 0.5% steps.
pub const TRIM_GRID: [f64; 21] = {
    let mut g = [0.0; 21];
    let mut i = 0;
    while i < 21 {
        g[i] = 0.005 * i as f64;
        i += 1;
    }
    g
};

/// Symmetric trim minimizing `T(trimmed) + lambda * trimmed_mass`, with
/// `lambda` equal to the untrimmed statistic.
pub fn select_truncation(scores: &[f64]) -> Result<TruncationSpec> {
    select_truncation_with_penalty(scores, 1.0)
}

/// As [`select_truncation`] with `lambda = penalty_scale * T(untrimmed)`.
pub fn select_truncation_with_penalty(scores: &[f64], penalty_scale: f64) -> Result<TruncationSpec> {
    if scores.len() < 1000 {
        return Err(Error::InsufficientData(format!("need at least 1000 scores, got {}", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("scores must be finite"));
    }
    if !(penalty_scale >= 0.0) {
        return Err(Error::arg("penalty scale must be non-negative"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let full = TruncatedNormal::from_sample(&sorted, f64::NEG_INFINITY, f64::INFINITY)?;
    let t0 = cvm_statistic(&sorted, &full)?;
    let lambda = penalty_scale * t0;

    let mut best = (t0, 0usize);
    for &p in &TRIM_GRID[1..] {
        let k = (p * n as f64).round() as usize;
        if k == 0 || 2 * k >= n - 10 {
            continue;
        }
        let kept = &sorted[k..n - k];
        let bench = TruncatedNormal::from_sample(kept, kept[0], kept[kept.len() - 1])?;
        let value = cvm_statistic(kept, &bench)? + lambda * (2 * k) as f64 / n as f64;
        if value < best.0 {
            best = (value, k);
        }
    }
    let k = best.1;
    if k == 0 {
        return Ok(TruncationSpec::none());
    }
    TruncationSpec::new(sorted[k], sorted[n - 1 - k], (2 * k) as f64 / n as f64)
}
