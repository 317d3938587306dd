use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::truncation::TruncationSpec;
use crate::error::{Error, Result};
use crate::model::{default_prob, map_chunks, GroupModel, Population, ScoreMap, StandardDraws};
use crate::normal;
use crate::quadrature::{expected_default, GaussHermite, MARGINAL_NODES};
use crate::rng;

pub const MOMENT_NAMES: [&str; 7] = [
    "approval_rate",
    "avg_default",
    "marginal_default",
    "avg_approved_score",
    "avg_rejected_score",
    "default_vs_score_slope",
    "score_vs_default_slope",
];

/// The seven target moments of one group.
///
/// `default_vs_score_slope` is the OLS slope of default on score among approved
/// loans; `score_vs_default_slope` the reverse regression of score on default
/// among approved loans. Default-based moments use default probabilities rather
/// than realized defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub approval_rate: f64,
    pub avg_default: f64,
    pub marginal_default: f64,
    pub avg_approved_score: f64,
    pub avg_rejected_score: f64,
    pub default_vs_score_slope: f64,
    pub score_vs_default_slope: f64,
}

impl MomentVector {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.approval_rate,
            self.avg_default,
            self.marginal_default,
            self.avg_approved_score,
            self.avg_rejected_score,
            self.default_vs_score_slope,
            self.score_vs_default_slope,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            approval_rate: a[0],
            avg_default: a[1],
            marginal_default: a[2],
            avg_approved_score: a[3],
            avg_rejected_score: a[4],
            default_vs_score_slope: a[5],
            score_vs_default_slope: a[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("moments must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.approval_rate) {
            return Err(Error::Validation(format!("approval rate {} outside [0, 1]", self.approval_rate)));
        }
        for (name, v) in [("average default", self.avg_default), ("marginal default", self.marginal_default)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("{name} {v} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Relative deviation of each moment from `target`, in percent.
    pub fn pct_deviation(&self, target: &MomentVector) -> [f64; 7] {
        let m = self.to_array();
        let t = target.to_array();
        std::array::from_fn(|j| 100.0 * (m[j] - t[j]) / t[j].abs().max(1e-12))
    }
}

/// Row layout for target-moment CSV files: one row per group.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MomentRow {
    group: String,
    approval_rate: f64,
    avg_default: f64,
    marginal_default: f64,
    avg_approved_score: f64,
    avg_rejected_score: f64,
    default_vs_score_slope: f64,
    score_vs_default_slope: f64,
}

impl MomentRow {
    fn new(group: &str, m: &MomentVector) -> Self {
        Self {
            group: group.to_string(),
            approval_rate: m.approval_rate,
            avg_default: m.avg_default,
            marginal_default: m.marginal_default,
            avg_approved_score: m.avg_approved_score,
            avg_rejected_score: m.avg_rejected_score,
            default_vs_score_slope: m.default_vs_score_slope,
            score_vs_default_slope: m.score_vs_default_slope,
        }
    }

    fn moments(&self) -> MomentVector {
        MomentVector {
            approval_rate: self.approval_rate,
            avg_default: self.avg_default,
            marginal_default: self.marginal_default,
            avg_approved_score: self.avg_approved_score,
            avg_rejected_score: self.avg_rejected_score,
            default_vs_score_slope: self.default_vs_score_slope,
            score_vs_default_slope: self.score_vs_default_slope,
        }
    }
}

pub fn read_moments_csv<R: Read>(input: R) -> Result<Vec<(String, MomentVector)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize::<MomentRow>() {
        let row = row?;
        let m = row.moments();
        m.validate()?;
        out.push((row.group, m));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("target moment file has no rows".into()));
    }
    Ok(out)
}

pub fn write_moments_csv<W: Write>(rows: &[(String, MomentVector)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (group, moments) in rows {
        w.serialize(MomentRow::new(group, moments))?;
    }
    w.flush()?;
    Ok(())
}

/// `E[delta(theta) | posterior = threshold]`: given the posterior, the type is
/// `N(threshold, 1 / (h0 + sum h_k))`.
pub fn marginal_default(model: &GroupModel, rule: &GaussHermite) -> f64 {
    expected_default(model.threshold, 1.0 / model.posterior_precision(), rule)
}

/// Moment evaluation on fixed standard draws (common random numbers).
///
/// Without truncation only the type draws are simulated; the signal noise is
/// integrated out in closed form given each type, which makes every moment a
/// smooth function of the parameters. With truncation the full signal draws
/// are used, since trimming on the score couples the noise to selection.
#[derive(Clone, Debug)]
pub struct MomentSimulator {
    draws: StandardDraws,
    rule: GaussHermite,
}

/// Per-chunk accumulators for the conditional route.
#[derive(Clone, Copy, Default)]
struct CondSums {
    pa: f64,
    pr: f64,
    d_pa: f64,
    s_a: f64,
    s_r: f64,
    d_s_a: f64,
    s2_a: f64,
}

impl CondSums {
    fn add(mut self, o: &CondSums) -> Self {
        self.pa += o.pa;
        self.pr += o.pr;
        self.d_pa += o.d_pa;
        self.s_a += o.s_a;
        self.s_r += o.s_r;
        self.d_s_a += o.d_s_a;
        self.s2_a += o.s2_a;
        self
    }
}

impl MomentSimulator {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("n must be ≥ 1"));
        }
        Ok(Self {
            draws: StandardDraws::generate(n, seed),
            rule: GaussHermite::new(MARGINAL_NODES),
        })
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.rule = GaussHermite::new(nodes);
        self
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &StandardDraws {
        &self.draws
    }

    pub fn moments(&self, model: &GroupModel, map: &ScoreMap, truncation: Option<&TruncationSpec>) -> Result<MomentVector> {
        model.validate()?;
        map.validate()?;
        match truncation {
            None => self.conditional(model, map),
            Some(t) => {
                let pop = Population::from_draws(model, map, &self.draws)?;
                let mut m = population_moments(&pop, Some(t))?;
                m.marginal_default = marginal_default(model, &self.rule);
                Ok(m)
            }
        }
    }

    fn conditional(&self, model: &GroupModel, map: &ScoreMap) -> Result<MomentVector> {
        let risk = model.risk;
        let h1 = model.signals.score_precision();
        let h = model.signals.total();
        let p = model.posterior_precision();
        let sd_cond = h.sqrt() / p;
        let beta = 1.0 / h.sqrt();
        let resid_var = (1.0 / h1 - 1.0 / h).max(0.0);
        let sd_theta = risk.sd();
        let xh = model.threshold;
        let z = &self.draws.z_theta;

        let parts = map_chunks(z.len(), |stream, len| {
            let start = stream as usize * rng::CHUNK;
            let mut s = CondSums::default();
            for &zt in &z[start..start + len] {
                let theta = risk.mu0 + sd_theta * zt;
                let mean_x = (risk.h0 * risk.mu0 + h * theta) / p;
                let c = (xh - mean_x) / sd_cond;
                // one tail evaluation; the complement only loses relative accuracy
                // where the value is near 1
                let (pa, pr) = if c > 0.0 {
                    let t = normal::sf(c);
                    (t, 1.0 - t)
                } else {
                    let t = normal::cdf(c);
                    (1.0 - t, t)
                };
                let phi = normal::pdf(c);
                let d = default_prob(theta);
                // E[s1 1{approved} | theta] etc. with u1 = beta W + e, W the standardized posterior
                let e1a = theta * pa + beta * phi;
                let e1r = theta * pr - beta * phi;
                let e2a = theta * theta * pa + 2.0 * theta * beta * phi + beta * beta * (pa + c * phi) + resid_var * pa;
                s.pa += pa;
                s.pr += pr;
                s.d_pa += d * pa;
                s.s_a += e1a;
                s.s_r += e1r;
                s.d_s_a += d * e1a;
                s.s2_a += e2a;
            }
            s
        });
        let s = parts.iter().fold(CondSums::default(), |acc, x| acc.add(x));
        let n = z.len() as f64;
        if s.pa <= 1e-300 || s.d_pa <= 1e-300 || s.pa - s.d_pa <= 1e-300 {
            return Err(Error::MomentUndefined("no approved applicants"));
        }
        if s.pr <= 1e-300 {
            return Err(Error::MomentUndefined("no rejected applicants"));
        }
        let b = map.slope();
        let avg_default = s.d_pa / s.pa;
        let mean_a = s.s_a / s.pa;
        let mean_r = s.s_r / s.pr;
        let var_a = s.s2_a / s.pa - mean_a * mean_a;
        let cov_a = s.d_s_a / s.pa - avg_default * mean_a;
        let mean_bad = s.d_s_a / s.d_pa;
        let mean_good = (s.s_a - s.d_s_a) / (s.pa - s.d_pa);
        if !(var_a > 0.0) {
            return Err(Error::MomentUndefined("approved scores have no spread"));
        }
        Ok(MomentVector {
            approval_rate: s.pa / n,
            avg_default,
            marginal_default: marginal_default(model, &self.rule),
            avg_approved_score: map.a1 + b * mean_a,
            avg_rejected_score: map.a1 + b * mean_r,
            default_vs_score_slope: cov_a / (b * var_a),
            score_vs_default_slope: b * (mean_bad - mean_good),
        })
    }
}

/// Seven moments for a group; deterministic in `(model, map, n, seed)`.
pub fn compute_moments(model: &GroupModel, map: &ScoreMap, n: usize, seed: u64, truncation: Option<&TruncationSpec>) -> Result<MomentVector> {
    MomentSimulator::new(n, seed)?.moments(model, map, truncation)
}

/// Moments read directly off a realized population, trimming applicants whose
/// score falls outside the truncation window first. Default-based moments use
/// each applicant's default probability. The marginal default rate is
/// evaluated by quadrature from the population's model.
pub fn population_moments(pop: &Population, truncation: Option<&TruncationSpec>) -> Result<MomentVector> {
    let xh = pop.model.threshold;
    let keep = |score: f64| truncation.is_none_or(|t| score >= t.lower && score <= t.upper);
    let (mut n, mut na, mut nr) = (0.0, 0.0, 0.0);
    let (mut d_a, mut s_a, mut s_r, mut ds_a, mut s2_a) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for a in &pop.applicants {
        if !keep(a.score) {
            continue;
        }
        n += 1.0;
        if a.posterior >= xh {
            let d = default_prob(a.theta);
            na += 1.0;
            d_a += d;
            s_a += a.score;
            ds_a += d * a.score;
            s2_a += a.score * a.score;
        } else {
            nr += 1.0;
            s_r += a.score;
        }
    }
    if na == 0.0 || d_a <= 0.0 || d_a >= na {
        return Err(Error::MomentUndefined("no approved applicants"));
    }
    if nr == 0.0 {
        return Err(Error::MomentUndefined("no rejected applicants"));
    }
    let avg_default = d_a / na;
    let mean_a = s_a / na;
    let var_a = s2_a / na - mean_a * mean_a;
    if !(var_a > 0.0) {
        return Err(Error::MomentUndefined("approved scores have no spread"));
    }
    let cov = ds_a / na - avg_default * mean_a;
    Ok(MomentVector {
        approval_rate: na / n,
        avg_default,
        marginal_default: marginal_default(&pop.model, &GaussHermite::new(MARGINAL_NODES)),
        avg_approved_score: mean_a,
        avg_rejected_score: s_r / nr,
        default_vs_score_slope: cov / var_a,
        score_vs_default_slope: ds_a / d_a - (s_a - ds_a) / (na - d_a),
    })
}
