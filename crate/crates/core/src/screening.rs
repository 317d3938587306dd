//! Approval decisions, lender profit, break-even thresholds and
//! counterfactual information structures.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{default_prob, map_jobs, GroupModel, Population, ScoreMap, StandardDraws};
use crate::normal;
use crate::quadrature::{expected_default, GaussHermite, GaussLegendre, MARGINAL_NODES};
use crate::smm::group_seed;

/// Per-loan profit `alpha + beta_r - gamma * delta(theta) - c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitParams {
    pub alpha: f64,
    pub beta_r: f64,
    pub gamma: f64,
    pub c: f64,
}

impl ProfitParams {
    pub fn new(alpha: f64, beta_r: f64, gamma: f64, c: f64) -> Result<Self> {
        let p = Self { alpha, beta_r, gamma, c };
        p.validate()?;
        Ok(p)
    }

    /// Parameters carrying the whole net margin in `alpha`.
    pub fn from_margin(gamma: f64, margin: f64) -> Result<Self> {
        Self::new(margin, 0.0, gamma, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.alpha, self.beta_r, self.gamma, self.c].iter().all(|v| v.is_finite()) {
            return Err(Error::param("profit parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma = {} outside [0, 1)", self.gamma)));
        }
        if self.c < 0.0 {
            return Err(Error::param("per-loan cost must be non-negative"));
        }
        Ok(())
    }

    /// Net margin `alpha + beta_r - c`.
    pub fn margin(&self) -> f64 {
        self.alpha + self.beta_r - self.c
    }

    pub fn loan_profit(&self, theta: f64) -> f64 {
        self.margin() - self.gamma * default_prob(theta)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub approved: Vec<bool>,
}

impl Decision {
    pub fn approval_rate(&self) -> f64 {
        if self.approved.is_empty() {
            return 0.0;
        }
        self.approved.iter().filter(|&&a| a).count() as f64 / self.approved.len() as f64
    }
}

/// Approves applicants whose posterior is at least `threshold`.
pub fn approve(pop: &Population, threshold: f64) -> Decision {
    Decision {
        approved: pop.applicants.iter().map(|a| a.posterior >= threshold).collect(),
    }
}

/// Average profit per applicant: the mean profit of approved loans times the
/// approval rate.
pub fn expected_profit(pop: &Population, profit: &ProfitParams, threshold: f64) -> f64 {
    if pop.is_empty() {
        return 0.0;
    }
    let total: f64 = pop
        .applicants
        .iter()
        .filter(|a| a.posterior >= threshold)
        .map(|a| profit.loan_profit(a.theta))
        .sum();
    total / pop.len() as f64
}

/// Sets the net margin so approved loans break even on average:
/// `m = gamma * E[delta | approved]`.
pub fn calibrate_zero_profit(pop: &Population, threshold: f64, gamma: f64) -> Result<ProfitParams> {
    let (mut k, mut d) = (0usize, 0.0);
    for a in pop.applicants.iter().filter(|a| a.posterior >= threshold) {
        k += 1;
        d += a.default_prob();
    }
    if k == 0 {
        return Err(Error::Calibration(format!("no applicant approved at threshold {threshold}")));
    }
    ProfitParams::from_margin(gamma, gamma * d / k as f64)
}

/// Average default rate among applicants with posterior at least `t`, computed
/// by quadrature under the model: the posterior is normal around `mu0` and the
/// type given the posterior is normal around it.
pub fn average_default_above(model: &GroupModel, t: f64) -> f64 {
    AboveThreshold::new(model).average_default(t)
}

struct AboveThreshold {
    mu0: f64,
    sd_x: f64,
    var_post: f64,
    gh: GaussHermite,
    gl: GaussLegendre,
}

impl AboveThreshold {
    const SPAN: f64 = 12.0;
    const PANELS: usize = 96;

    fn new(model: &GroupModel) -> Self {
        Self {
            mu0: model.risk.mu0,
            sd_x: model.posterior_mean_sd(),
            var_post: 1.0 / model.posterior_precision(),
            gh: GaussHermite::new(MARGINAL_NODES),
            gl: GaussLegendre::new(16),
        }
    }

    fn average_default(&self, t: f64) -> f64 {
        let z0 = ((t - self.mu0) / self.sd_x).max(-Self::SPAN);
        if z0 >= Self::SPAN {
            return expected_default(t, self.var_post, &self.gh);
        }
        let num = self.gl.integrate(z0, Self::SPAN, Self::PANELS, |z| {
            normal::pdf(z) * expected_default(self.mu0 + self.sd_x * z, self.var_post, &self.gh)
        });
        let mass = normal::sf(z0);
        if mass < 1e-300 {
            return expected_default(t, self.var_post, &self.gh);
        }
        num / mass
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreakEven {
    /// Solved threshold; `-inf` when every applicant is profitable on average.
    pub threshold: f64,
    /// `gamma * E[delta | posterior >= threshold] - m` at the solution.
    pub residual: f64,
    /// The root was not bracketed and the threshold sits on a bracket edge.
    pub at_edge: bool,
}

/// Threshold at which approved loans break even on average,
/// `gamma * E[delta | posterior >= x] = m`, found by bisection on
/// `[mu0 - 8 sd, mu0 + 8 sd]` of the type distribution to 1e-8.
///
/// When the margin covers the average default cost of the whole pool the
/// threshold is `-inf` (approve all); when no threshold in the bracket is
/// profitable the upper edge is returned with `at_edge` set.
pub fn break_even_threshold(model: &GroupModel, profit: &ProfitParams) -> Result<BreakEven> {
    model.validate()?;
    profit.validate()?;
    let m = profit.margin();
    let eval = AboveThreshold::new(model);
    let f = |t: f64| profit.gamma * eval.average_default(t) - m;
    let sd = model.risk.sd();
    let (mut lo, mut hi) = (model.risk.mu0 - 8.0 * sd, model.risk.mu0 + 8.0 * sd);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo <= 0.0 {
        return Ok(BreakEven {
            threshold: f64::NEG_INFINITY,
            residual: profit.gamma * expected_default(model.risk.mu0, model.risk.variance(), &eval.gh) - m,
            at_edge: false,
        });
    }
    if f_hi > 0.0 {
        return Ok(BreakEven {
            threshold: hi,
            residual: f_hi,
            at_edge: true,
        });
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(BreakEven {
        threshold: t,
        residual: f(t),
        at_edge: false,
    })
}

/// Type I rate: share of all applicants with `theta >= threshold` who are
/// rejected. Type II rate: share with `theta < threshold` who are approved.
pub fn error_rates(pop: &Population, decision: &Decision, threshold: f64) -> Result<(f64, f64)> {
    if decision.approved.len() != pop.len() {
        return Err(Error::Dimension {
            what: "decision",
            expected: pop.len(),
            got: decision.approved.len(),
        });
    }
    if pop.is_empty() {
        return Err(Error::arg("empty population"));
    }
    let (mut t1, mut t2) = (0usize, 0usize);
    for (a, &ok) in pop.applicants.iter().zip(&decision.approved) {
        let good = a.theta >= threshold;
        if good && !ok {
            t1 += 1;
        } else if !good && ok {
            t2 += 1;
        }
    }
    let n = pop.len() as f64;
    Ok((t1 as f64 / n, t2 as f64 / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Baseline,
    RemoveOtherSignal,
    EqualizeScorePrecision,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Baseline, Scenario::RemoveOtherSignal, Scenario::EqualizeScorePrecision];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::RemoveOtherSignal => "remove-other-signal",
            Scenario::EqualizeScorePrecision => "equalize-score-precision",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::arg(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfSpec {
    pub scenario: Scenario,
    /// Group whose score precision every other group receives.
    pub reference: Option<String>,
}

impl CfSpec {
    pub fn baseline() -> Self {
        Self {
            scenario: Scenario::Baseline,
            reference: None,
        }
    }

    pub fn remove_other_signal() -> Self {
        Self {
            scenario: Scenario::RemoveOtherSignal,
            reference: None,
        }
    }

    pub fn equalize(reference: impl Into<String>) -> Self {
        Self {
            scenario: Scenario::EqualizeScorePrecision,
            reference: Some(reference.into()),
        }
    }

    /// Information structure of `model` under this scenario.
    pub fn apply(&self, model: &GroupModel, models: &[GroupModel]) -> Result<GroupModel> {
        let mut out = model.clone();
        match self.scenario {
            Scenario::Baseline => {}
            Scenario::RemoveOtherSignal => out.signals = model.signals.score_only(),
            Scenario::EqualizeScorePrecision => {
                let label = self
                    .reference
                    .as_deref()
                    .ok_or_else(|| Error::arg("equalize scenario needs a reference group"))?;
                let reference = models
                    .iter()
                    .find(|m| m.label == label)
                    .ok_or_else(|| Error::arg(format!("reference group '{label}' not found")))?;
                out.signals = model.signals.with_score_precision(reference.signals.score_precision())?;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfReport {
    pub scenario: Scenario,
    pub group: String,
    pub approval_rate: f64,
    pub type1: f64,
    pub type2: f64,
    pub threshold: f64,
    #[serde(skip)]
    pub at_edge: bool,
}

pub fn write_cf_csv<W: Write>(reports: &[CfReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one counterfactual for every group.
///
/// Per group: the margin is calibrated so approved loans break even on
/// average at the estimated threshold; the signal structure is changed per
/// `spec`; a new break-even threshold is solved; and approval and error rates
/// are measured on a population that reuses the baseline type and noise
/// draws. A scenario that leaves a group's model unchanged keeps the
/// estimated threshold, so it reproduces the baseline exactly.
pub fn run_counterfactual(
    models: &[GroupModel],
    map: &ScoreMap,
    spec: &CfSpec,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<CfReport>> {
    if n == 0 {
        return Err(Error::arg("n must be ≥ 1"));
    }
    if models.is_empty() {
        return Err(Error::arg("no groups"));
    }
    map.validate()?;
    let reports = map_jobs(models, |g, model| -> Result<CfReport> {
        let draws = StandardDraws::generate(n, group_seed(seed, g));
        counterfactual_group(model, models, map, spec, gamma, &draws)
    });
    reports.into_iter().collect()
}

/// All three scenarios, ordered by scenario then group.
pub fn run_all_counterfactuals(
    models: &[GroupModel],
    map: &ScoreMap,
    reference: &str,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<CfReport>> {
    let mut out = Vec::new();
    for spec in [CfSpec::baseline(), CfSpec::remove_other_signal(), CfSpec::equalize(reference)] {
        out.extend(run_counterfactual(models, map, &spec, gamma, n, seed)?);
    }
    Ok(out)
}

fn counterfactual_group(
    model: &GroupModel,
    models: &[GroupModel],
    map: &ScoreMap,
    spec: &CfSpec,
    gamma: f64,
    draws: &StandardDraws,
) -> Result<CfReport> {
    let profit = ProfitParams::from_margin(gamma, gamma * average_default_above(model, model.threshold))?;
    let cf = spec.apply(model, models)?;
    let (threshold, at_edge) = if cf.signals == model.signals {
        (model.threshold, false)
    } else {
        let b = break_even_threshold(&cf, &profit)?;
        (b.threshold, b.at_edge)
    };
    let cf = GroupModel { threshold, ..cf };
    let pop = Population::from_draws(&cf, map, draws)?;
    let decision = approve(&pop, threshold);
    let (type1, type2) = error_rates(&pop, &decision, threshold)?;
    Ok(CfReport {
        scenario: spec.scenario,
        group: model.label.clone(),
        approval_rate: decision.approval_rate(),
        type1,
        type2,
        threshold,
        at_edge,
    })
}
