use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::moments::{MomentSimulator, MomentVector, MOMENT_NAMES};
use super::truncation::TruncationSpec;
use crate::error::{Error, Result};
use crate::model::{map_jobs, GroupModel, RiskParams, ScoreMap, SignalSpec};
use crate::rng;

/// Objective value assigned to parameter points where a moment is undefined.
pub const FAILURE_PENALTY: f64 = 1.0e6;

/// Scale floors: rates, rates, rates, scores, scores, slopes, slopes.
pub const SCALE_FLOORS: [f64; 7] = [1e-3, 1e-3, 1e-3, 1.0, 1.0, 1e-5, 1e-5];

/// A run counts as successful when every moment is within this many percent.
pub const MAX_PCT_DEVIATION: f64 = 50.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Equal,
    /// Approval, average and marginal default rates count double.
    RateEmphasis,
    /// Both slopes count double.
    SlopeEmphasis,
}

impl Weighting {
    pub fn weights(&self) -> [f64; 7] {
        match self {
            Weighting::Equal => [1.0; 7],
            Weighting::RateEmphasis => [2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0],
            Weighting::SlopeEmphasis => [1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Weighting::Equal => "equal",
            Weighting::RateEmphasis => "rate-emphasis",
            Weighting::SlopeEmphasis => "slope-emphasis",
        }
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Weighting::Equal),
            "rate-emphasis" => Ok(Weighting::RateEmphasis),
            "slope-emphasis" => Ok(Weighting::SlopeEmphasis),
            other => Err(Error::arg(format!("unknown weighting scheme '{other}'"))),
        }
    }
}

/// Group parameters held at given values during estimation; `None` is free.
/// Variances are in natural units (`1/h`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FreeParams {
    pub mu0: Option<f64>,
    pub var_theta: Option<f64>,
    pub var_score: Option<f64>,
    pub var_other: Option<f64>,
    pub threshold: Option<f64>,
}

impl FreeParams {
    fn as_array(&self) -> [Option<f64>; 5] {
        [self.mu0, self.var_theta, self.var_score, self.var_other, self.threshold]
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.as_array()) {
            if let Some(v) = v {
                if !v.is_finite() || (name.starts_with("var") && v <= 0.0) {
                    return Err(Error::param(format!("fixed {name} = {v} is not admissible")));
                }
            }
        }
        Ok(())
    }
}

/// Natural-unit group parameters: mu0, var_theta, var_score, var_other, threshold.
pub const PARAM_NAMES: [&str; 5] = ["mu0", "var_theta", "var_score", "var_other", "threshold"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTarget {
    pub label: String,
    pub moments: MomentVector,
    #[serde(default)]
    pub truncation: Option<TruncationSpec>,
    #[serde(default)]
    pub fixed: FreeParams,
}

impl GroupTarget {
    pub fn new(label: impl Into<String>, moments: MomentVector) -> Self {
        Self {
            label: label.into(),
            moments,
            truncation: None,
            fixed: FreeParams::default(),
        }
    }
}

/// Latin-hypercube box for multi-start points. Variances and the score slope
/// are sampled log-uniformly; the threshold is placed `threshold_z` standard
/// deviations of the posterior mean away from `mu0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub mu0: (f64, f64),
    pub var_theta: (f64, f64),
    pub var_score: (f64, f64),
    pub var_other: (f64, f64),
    pub threshold_z: (f64, f64),
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            mu0: (0.5, 4.0),
            var_theta: (3.0, 35.0),
            var_score: (0.2, 4.0),
            var_other: (0.2, 8.0),
            threshold_z: (-0.8, 0.8),
        }
    }
}

impl ParamBox {
    /// Maps a point of the unit cube to natural group parameters.
    pub fn point(&self, u: [f64; 5]) -> [f64; 5] {
        let lin = |(a, b): (f64, f64), t: f64| a + t * (b - a);
        let log = |(a, b): (f64, f64), t: f64| (a.ln() + t * (b.ln() - a.ln())).exp();
        let mu0 = lin(self.mu0, u[0]);
        let var_theta = log(self.var_theta, u[1]);
        let var_score = log(self.var_score, u[2]);
        let var_other = log(self.var_other, u[3]);
        let h0 = 1.0 / var_theta;
        let h = 1.0 / var_score + 1.0 / var_other;
        let sd_x = (h / (h0 * (h0 + h))).sqrt();
        [mu0, var_theta, var_score, var_other, mu0 + lin(self.threshold_z, u[4]) * sd_x]
    }
}

/// Hard limits of the search space in optimizer coordinates.
const LN_VAR_BOUNDS: (f64, f64) = (-9.210_340_371_976_182, 9.210_340_371_976_182); // 1e-4 .. 1e4
const MU0_BOUNDS: (f64, f64) = (-15.0, 20.0);
const THRESHOLD_BOUNDS: (f64, f64) = (-40.0, 40.0);
const A1_BOUNDS: (f64, f64) = (-50.0, 50.0); // hundreds of score points
const LN_SLOPE_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 9.210_340_371_976_182); // 0.01 .. 1e4

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Simulated applicants per group.
    pub n: usize,
    pub seed: u64,
    pub starts: usize,
    pub max_iter: usize,
    /// Relative objective improvement below which an iteration counts as stalled.
    pub tol: f64,
    pub weighting: Weighting,
    pub param_box: ParamBox,
    /// Score map held fixed instead of fitted.
    pub fixed_map: Option<ScoreMap>,
    /// A start is only eligible when every moment is within this many percent
    /// of its target.
    pub max_pct_deviation: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n: 200_000,
            seed: 0,
            starts: 8,
            max_iter: 200,
            tol: 1e-10,
            weighting: Weighting::Equal,
            param_box: ParamBox::default(),
            fixed_map: None,
            max_pct_deviation: MAX_PCT_DEVIATION,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::arg("n must be ≥ 1"));
        }
        if self.starts == 0 {
            return Err(Error::arg("at least one start is required"));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("max_iter must be ≥ 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("tol must be positive"));
        }
        if let Some(m) = &self.fixed_map {
            m.validate()?;
        }
        if !(self.max_pct_deviation > 0.0) {
            return Err(Error::arg("max_pct_deviation must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub index: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub max_pct_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub model: GroupModel,
    pub target: MomentVector,
    pub fitted: MomentVector,
    pub pct_deviation: [f64; 7],
    /// Parameters that ended on a search-space limit.
    pub capped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub groups: Vec<GroupFit>,
    pub map: ScoreMap,
    pub objective: f64,
    pub weighting: Weighting,
    pub best_start: usize,
    pub starts: Vec<StartTrace>,
    pub n: usize,
    pub seed: u64,
}

/// Weighted sum of squared scaled moment deviations under common random
/// numbers; [`FAILURE_PENALTY`] where a moment is undefined.
pub fn objective(
    model: &GroupModel,
    map: &ScoreMap,
    target: &MomentVector,
    weights: &[f64; 7],
    sim: &MomentSimulator,
    truncation: Option<&TruncationSpec>,
) -> Result<f64> {
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::arg("moment weights must be positive"));
    }
    Ok(match residuals(model, map, target, weights, sim, truncation) {
        Some(r) => r.iter().map(|x| x * x).sum(),
        None => FAILURE_PENALTY,
    })
}

fn residuals(
    model: &GroupModel,
    map: &ScoreMap,
    target: &MomentVector,
    weights: &[f64; 7],
    sim: &MomentSimulator,
    truncation: Option<&TruncationSpec>,
) -> Option<[f64; 7]> {
    let m = sim.moments(model, map, truncation).ok()?.to_array();
    let t = target.to_array();
    let r: [f64; 7] = std::array::from_fn(|j| weights[j].sqrt() * (m[j] - t[j]) / t[j].abs().max(SCALE_FLOORS[j]));
    r.iter().all(|x| x.is_finite()).then_some(r)
}

/// Maps between optimizer coordinates and model parameters.
///
/// Per group the coordinates are `mu0`, log variances of the type and both
/// signals, and the threshold, skipping fixed ones; the shared score map adds
/// `a1 / 100` and the log slope.
struct Layout {
    groups: Vec<GroupLayout>,
    map_at: Option<usize>,
    fixed_map: Option<ScoreMap>,
    dim: usize,
}

struct GroupLayout {
    label: String,
    fixed: [Option<f64>; 5],
    /// (parameter slot, coordinate index) for free parameters.
    free: Vec<(usize, usize)>,
}

fn slot_bounds(slot: usize) -> (f64, f64) {
    match slot {
        0 => MU0_BOUNDS,
        1..=3 => LN_VAR_BOUNDS,
        _ => THRESHOLD_BOUNDS,
    }
}

impl Layout {
    fn new(targets: &[GroupTarget], fixed_map: Option<ScoreMap>) -> Self {
        let mut dim = 0;
        let groups = targets
            .iter()
            .map(|t| {
                let fixed = t.fixed.as_array();
                let free = (0..5)
                    .filter(|&s| fixed[s].is_none())
                    .map(|s| {
                        dim += 1;
                        (s, dim - 1)
                    })
                    .collect();
                GroupLayout {
                    label: t.label.clone(),
                    fixed,
                    free,
                }
            })
            .collect();
        let map_at = fixed_map.is_none().then(|| {
            dim += 2;
            dim - 2
        });
        Self {
            groups,
            map_at,
            fixed_map,
            dim,
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, 0.0); self.dim];
        for g in &self.groups {
            for &(s, i) in &g.free {
                b[i] = slot_bounds(s);
            }
        }
        if let Some(i) = self.map_at {
            b[i] = A1_BOUNDS;
            b[i + 1] = LN_SLOPE_BOUNDS;
        }
        b
    }

    /// Natural parameters of group `g`.
    fn natural(&self, g: usize, u: &[f64]) -> [f64; 5] {
        let gl = &self.groups[g];
        let mut p = gl.fixed.map(|v| v.unwrap_or(f64::NAN));
        for &(s, i) in &gl.free {
            p[s] = if (1..=3).contains(&s) { u[i].exp() } else { u[i] };
        }
        p
    }

    fn encode_group(&self, g: usize, p: &[f64; 5], u: &mut [f64]) {
        for &(s, i) in &self.groups[g].free {
            u[i] = if (1..=3).contains(&s) { p[s].ln() } else { p[s] };
        }
    }

    fn map(&self, u: &[f64]) -> Option<ScoreMap> {
        match (self.fixed_map, self.map_at) {
            (Some(m), _) => Some(m),
            (None, Some(i)) => ScoreMap::from_slope(100.0 * u[i], u[i + 1].exp()).ok(),
            _ => None,
        }
    }

    fn model(&self, g: usize, u: &[f64]) -> Option<GroupModel> {
        build_model(&self.groups[g].label, &self.natural(g, u)).ok()
    }

    /// Coordinates that affect group `g`.
    fn touches(&self, g: usize, i: usize) -> bool {
        self.groups[g].free.iter().any(|&(_, j)| j == i) || self.map_at.is_some_and(|m| i == m || i == m + 1)
    }
}

fn build_model(label: &str, p: &[f64; 5]) -> Result<GroupModel> {
    GroupModel::new(
        label,
        RiskParams::from_variance(p[0], p[1])?,
        SignalSpec::new(vec![1.0 / p[2], 1.0 / p[3]])?,
        p[4],
    )
}

/// Shared evaluation state for one estimation problem.
struct Problem<'a> {
    layout: Layout,
    targets: &'a [GroupTarget],
    sims: Vec<MomentSimulator>,
    weights: [f64; 7],
    bounds: Vec<(f64, f64)>,
}

impl Problem<'_> {
    fn group_residuals(&self, g: usize, u: &[f64]) -> Option<[f64; 7]> {
        let model = self.layout.model(g, u)?;
        let map = self.layout.map(u)?;
        let t = &self.targets[g];
        residuals(&model, &map, &t.moments, &self.weights, &self.sims[g], t.truncation.as_ref())
    }

    fn all_residuals(&self, u: &[f64]) -> Vec<Option<[f64; 7]>> {
        (0..self.targets.len()).map(|g| self.group_residuals(g, u)).collect()
    }

    fn value(res: &[Option<[f64; 7]>]) -> f64 {
        res.iter()
            .map(|r| match r {
                Some(r) => r.iter().map(|x| x * x).sum(),
                None => FAILURE_PENALTY,
            })
            .sum()
    }

    fn clamp(&self, u: &mut [f64]) {
        for (x, &(lo, hi)) in u.iter_mut().zip(&self.bounds) {
            *x = x.clamp(lo, hi);
        }
    }
}

/// Optimizer state for one start.
struct Run<'p, 'a> {
    p: &'p Problem<'a>,
    u: Vec<f64>,
    res: Vec<Option<[f64; 7]>>,
    f: f64,
    evals: usize,
}

impl Run<'_, '_> {
    fn try_point(&mut self, mut v: Vec<f64>) -> bool {
        self.p.clamp(&mut v);
        let res = self.p.all_residuals(&v);
        self.evals += self.res.len();
        let f = Problem::value(&res);
        if f < self.f {
            self.u = v;
            self.res = res;
            self.f = f;
            true
        } else {
            false
        }
    }

    /// Forward-difference Jacobian of the stacked residuals. A coordinate only
    /// re-evaluates the groups it touches.
    fn jacobian(&mut self) -> Option<DMatrix<f64>> {
        let groups = self.res.len();
        let r0: Vec<[f64; 7]> = self.res.iter().map(|r| r.ok_or(())).collect::<std::result::Result<_, _>>().ok()?;
        let mut j = DMatrix::zeros(7 * groups, self.p.layout.dim);
        for i in 0..self.p.layout.dim {
            let (lo, hi) = self.p.bounds[i];
            let mut h = 1e-6 * self.u[i].abs().max(1.0);
            if self.u[i] + h > hi {
                h = -h;
            }
            if self.u[i] + h < lo {
                continue;
            }
            let mut v = self.u.clone();
            v[i] += h;
            for g in 0..groups {
                if !self.p.layout.touches(g, i) {
                    continue;
                }
                self.evals += 1;
                if let Some(r) = self.p.group_residuals(g, &v) {
                    for k in 0..7 {
                        j[(7 * g + k, i)] = (r[k] - r0[g][k]) / h;
                    }
                }
            }
        }
        Some(j)
    }

    /// Damped Gauss–Newton step along the finite-difference gradient, with
    /// the damping adapted until the objective decreases.
    fn gradient_step(&mut self, lambda: &mut f64) -> bool {
        let Some(j) = self.jacobian() else {
            return false;
        };
        let r = DVector::from_iterator(7 * self.res.len(), self.res.iter().flat_map(|r| r.unwrap()));
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += *lambda * jtj[(k, k)].max(1e-12);
            }
            if let Some(chol) = a.cholesky() {
                let step = chol.solve(&(-&g));
                let v: Vec<f64> = self.u.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                if self.try_point(v) {
                    *lambda = (*lambda / 3.0).max(1e-12);
                    return true;
                }
            }
            *lambda *= 4.0;
        }
        false
    }

    /// One pass of expanding/shrinking searches along each coordinate.
    fn coordinate_sweep(&mut self, steps: &mut [f64]) -> bool {
        let mut improved = false;
        for i in 0..self.u.len() {
            let mut moved = false;
            for dir in [1.0, -1.0] {
                let mut s = steps[i];
                let mut v = self.u.clone();
                v[i] += dir * s;
                while self.try_point(v.clone()) {
                    moved = true;
                    s *= 2.0;
                    v = self.u.clone();
                    v[i] += dir * s;
                }
                if moved {
                    steps[i] = s / 2.0;
                    break;
                }
            }
            if !moved {
                steps[i] = (steps[i] / 2.0).max(1e-9);
            }
            improved |= moved;
        }
        improved
    }

    fn optimize(&mut self, max_iter: usize, tol: f64) -> usize {
        let mut lambda = 1e-3;
        let mut steps = vec![0.05; self.u.len()];
        let mut stalled = 0;
        for it in 1..=max_iter {
            let f_before = self.f;
            let a = self.gradient_step(&mut lambda);
            let b = self.coordinate_sweep(&mut steps);
            if self.f < 1e-20 {
                return it;
            }
            let rel = (f_before - self.f) / f_before.max(1e-300);
            if (!a && !b) || rel < tol {
                stalled += 1;
                if stalled >= 3 {
                    return it;
                }
            } else {
                stalled = 0;
            }
        }
        max_iter
    }
}

/// Latin-hypercube sample of `k` points in `[0, 1)^5`.
fn latin_hypercube(k: usize, seed: u64) -> Vec<[f64; 5]> {
    let mut r = rng::aux_stream(seed, 0x534d_4d00);
    let mut pts = vec![[0.0; 5]; k];
    for d in 0..5 {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        for (i, p) in pts.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + r.random::<f64>()) / k as f64;
        }
    }
    pts
}

/// Least-squares intercept and slope matching the score means of all groups,
/// given group parameters. Falls back to a flat default when ill-posed.
fn initial_map(problem: &Problem, u: &[f64]) -> (f64, f64) {
    let unit = ScoreMap::from_slope(0.0, 1.0).unwrap();
    let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for (g, t) in problem.targets.iter().enumerate() {
        let Some(model) = problem.layout.model(g, u) else { continue };
        let Ok(m) = problem.sims[g].moments(&model, &unit, None) else { continue };
        for (x, y) in [
            (m.avg_approved_score, t.moments.avg_approved_score),
            (m.avg_rejected_score, t.moments.avg_rejected_score),
        ] {
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            k += 1.0;
        }
    }
    let var = sxx / k.max(1.0) - (sx / k.max(1.0)).powi(2);
    if k < 2.0 || var <= 1e-12 {
        return (sy / k.max(1.0), 10.0);
    }
    let b = (sxy / k - sx * sy / (k * k)) / var;
    let b = if b > 0.01 { b } else { 10.0 };
    (sy / k - b * sx / k, b)
}

/// Fits every group's parameters and a shared score map to the target moments.
///
/// Each start is drawn from a Latin hypercube over `config.param_box` (fixed
/// parameters keep their values), with the score map initialized by least
/// squares on the score means. Starts are optimized independently by
/// alternating damped finite-difference gradient steps with coordinate line
/// searches, all on the same simulation draws. The start with the lowest
/// objective among those whose moments all lie within
/// `config.max_pct_deviation` percent of target is returned; ties go to the
/// lower start index.
pub fn estimate(targets: &[GroupTarget], config: &EstimationConfig) -> Result<EstimationResult> {
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::arg("no target groups"));
    }
    for t in targets {
        t.moments.validate()?;
        t.fixed.validate()?;
    }
    let sims = targets
        .iter()
        .enumerate()
        .map(|(g, _)| MomentSimulator::new(config.n, group_seed(config.seed, g)))
        .collect::<Result<Vec<_>>>()?;
    let layout = Layout::new(targets, config.fixed_map);
    let bounds = layout.bounds();
    let problem = Problem {
        layout,
        targets,
        sims,
        weights: config.weighting.weights(),
        bounds,
    };

    let cube = latin_hypercube(config.starts * targets.len(), config.seed);
    let runs = map_jobs(&(0..config.starts).collect::<Vec<_>>(), |_, &s| {
        let mut u = vec![0.0; problem.layout.dim];
        for g in 0..targets.len() {
            let mut p = config.param_box.point(cube[s * targets.len() + g]);
            for (slot, v) in targets[g].fixed.as_array().iter().enumerate() {
                if let Some(v) = v {
                    p[slot] = *v;
                }
            }
            if targets[g].fixed.threshold.is_none() && targets[g].fixed.as_array()[..4].iter().any(Option::is_some) {
                // recentre the threshold on the possibly fixed prior
                let q = config.param_box.point(cube[s * targets.len() + g]);
                let h0 = 1.0 / p[1];
                let h = 1.0 / p[2] + 1.0 / p[3];
                let sd_x = (h / (h0 * (h0 + h))).sqrt();
                let qh0 = 1.0 / q[1];
                let qh = 1.0 / q[2] + 1.0 / q[3];
                let z = (q[4] - q[0]) / (qh / (qh0 * (qh0 + qh))).sqrt();
                p[4] = p[0] + z * sd_x;
            }
            problem.layout.encode_group(g, &p, &mut u);
        }
        if let Some(i) = problem.layout.map_at {
            let (a1, b) = initial_map(&problem, &u);
            u[i] = a1 / 100.0;
            u[i + 1] = b.ln();
        }
        problem.clamp(&mut u);
        let res = problem.all_residuals(&u);
        let f = Problem::value(&res);
        let mut run = Run {
            p: &problem,
            u,
            res,
            f,
            evals: targets.len(),
        };
        let iterations = run.optimize(config.max_iter, config.tol);
        (f, iterations, run.u, run.f, run.evals)
    });

    let mut traces = Vec::with_capacity(runs.len());
    let mut fits: Vec<Option<(Vec<GroupFit>, ScoreMap)>> = Vec::with_capacity(runs.len());
    for (index, (f0, iterations, u, f, evals)) in runs.iter().enumerate() {
        let fit = finish(&problem, u);
        let max_dev = fit
            .as_ref()
            .map(|(g, _)| g.iter().flat_map(|g| g.pct_deviation).map(f64::abs).fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY);
        traces.push(StartTrace {
            index,
            initial_objective: *f0,
            final_objective: *f,
            iterations: *iterations,
            evaluations: *evals,
            max_pct_deviation: max_dev,
        });
        fits.push(fit);
    }
    let best = traces
        .iter()
        .filter(|t| t.max_pct_deviation < config.max_pct_deviation)
        .min_by(|a, b| a.final_objective.total_cmp(&b.final_objective).then(a.index.cmp(&b.index)));
    let Some(best) = best else {
        let mut msg = format!("no start reached all moments within {}%:", config.max_pct_deviation);
        for t in &traces {
            let _ = write!(
                msg,
                " [start {}: objective {:.4e}, worst deviation {:.1}%]",
                t.index, t.final_objective, t.max_pct_deviation
            );
        }
        return Err(Error::EstimationFailed(msg));
    };
    let (groups, map) = fits[best.index].take().expect("successful start has a fit");
    Ok(EstimationResult {
        groups,
        map,
        objective: best.final_objective,
        weighting: config.weighting,
        best_start: best.index,
        starts: traces,
        n: config.n,
        seed: config.seed,
    })
}

/// Seed of the simulation draws used for group `g`.
pub fn group_seed(seed: u64, g: usize) -> u64 {
    seed.wrapping_add((g as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn finish(problem: &Problem, u: &[f64]) -> Option<(Vec<GroupFit>, ScoreMap)> {
    let map = problem.layout.map(u)?;
    let mut groups = Vec::new();
    for (g, t) in problem.targets.iter().enumerate() {
        let model = problem.layout.model(g, u)?;
        let fitted = problem.sims[g].moments(&model, &map, t.truncation.as_ref()).ok()?;
        let mut capped = Vec::new();
        for &(s, i) in &problem.layout.groups[g].free {
            let (lo, hi) = problem.bounds[i];
            if (u[i] - lo).abs() < 1e-9 || (u[i] - hi).abs() < 1e-9 {
                capped.push(PARAM_NAMES[s].to_string());
            }
        }
        groups.push(GroupFit {
            model,
            target: t.moments,
            pct_deviation: fitted.pct_deviation(&t.moments),
            fitted,
            capped,
        });
    }
    if let Some(i) = problem.layout.map_at {
        for (k, name) in [(i, "a1"), (i + 1, "slope")] {
            let (lo, hi) = problem.bounds[k];
            if (u[k] - lo).abs() < 1e-9 || (u[k] - hi).abs() < 1e-9 {
                for g in &mut groups {
                    g.capped.push(name.to_string());
                }
            }
        }
    }
    Some((groups, map))
}

#[derive(Serialize)]
struct ParamRow<'a> {
    group: &'a str,
    mu0: f64,
    var_theta: f64,
    var_score: f64,
    var_other: f64,
    threshold: f64,
    a1: f64,
    a2: f64,
    objective: f64,
    weighting: &'static str,
    capped: String,
}

#[derive(Deserialize)]
struct ParamRecord {
    group: String,
    mu0: f64,
    var_theta: f64,
    var_score: f64,
    var_other: f64,
    threshold: f64,
    a1: f64,
    a2: f64,
}

/// Reads a parameter table written by [`EstimationResult::write_params_csv`]
/// back into group models and the shared score map. An infinite `var_other`
/// means the group has the score signal only.
pub fn read_params_csv<R: Read>(input: R) -> Result<(Vec<GroupModel>, ScoreMap)> {
    let mut r = csv::Reader::from_reader(input);
    let mut models = Vec::new();
    let mut map: Option<ScoreMap> = None;
    for row in r.deserialize::<ParamRecord>() {
        let row = row?;
        let m = ScoreMap::new(row.a1, row.a2)?;
        match map {
            Some(prev) if prev != m => {
                return Err(Error::Validation(format!("group {} has a different score map", row.group)));
            }
            _ => map = Some(m),
        }
        let mut precisions = vec![1.0 / row.var_score];
        if row.var_other.is_finite() {
            precisions.push(1.0 / row.var_other);
        }
        models.push(GroupModel::new(
            row.group,
            RiskParams::from_variance(row.mu0, row.var_theta)?,
            SignalSpec::new(precisions)?,
            row.threshold,
        )?);
    }
    let map = map.ok_or_else(|| Error::InsufficientData("parameter file has no rows".into()))?;
    Ok((models, map))
}

#[derive(Serialize)]
struct MomentFitRow<'a> {
    group: &'a str,
    moment: &'static str,
    target: f64,
    fitted: f64,
    pct_deviation: f64,
}

impl GroupFit {
    /// Natural parameters: mu0, var_theta, var_score, var_other, threshold.
    pub fn params(&self) -> [f64; 5] {
        let p = self.model.signals.precisions();
        [
            self.model.risk.mu0,
            self.model.risk.variance(),
            1.0 / p[0],
            p.get(1).map_or(f64::INFINITY, |h| 1.0 / h),
            self.model.threshold,
        ]
    }
}

impl EstimationResult {
    pub fn group(&self, label: &str) -> Option<&GroupFit> {
        self.groups.iter().find(|g| g.model.label == label)
    }

    pub fn models(&self) -> Vec<GroupModel> {
        self.groups.iter().map(|g| g.model.clone()).collect()
    }

    /// Mean absolute percentage deviation across all groups and moments.
    pub fn mean_abs_pct_deviation(&self) -> f64 {
        let all: Vec<f64> = self.groups.iter().flat_map(|g| g.pct_deviation).map(f64::abs).collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    /// One row per group with natural parameters and the shared map.
    pub fn write_params_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for g in &self.groups {
            let p = g.params();
            w.serialize(ParamRow {
                group: &g.model.label,
                mu0: p[0],
                var_theta: p[1],
                var_score: p[2],
                var_other: p[3],
                threshold: p[4],
                a1: self.map.a1,
                a2: self.map.a2,
                objective: self.objective,
                weighting: self.weighting.label(),
                capped: g.capped.join(";"),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per group and moment: target, fitted value, deviation in percent.
    pub fn write_moments_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for g in &self.groups {
            let (t, m) = (g.target.to_array(), g.fitted.to_array());
            for j in 0..7 {
                w.serialize(MomentFitRow {
                    group: &g.model.label,
                    moment: MOMENT_NAMES[j],
                    target: t[j],
                    fitted: m[j],
                    pct_deviation: g.pct_deviation[j],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "SMM estimate ({} weighting, n = {}, seed = {})", self.weighting.label(), self.n, self.seed);
        let _ = writeln!(s, "objective {:.6e}, best start {} of {}", self.objective, self.best_start, self.starts.len());
        let _ = writeln!(s, "score map: a1 = {:.3}, a2 = {:.4}", self.map.a1, self.map.a2);
        for g in &self.groups {
            let p = g.params();
            let _ = writeln!(s, "\n[{}]", g.model.label);
            for (name, v) in PARAM_NAMES.iter().zip(p) {
                let _ = writeln!(s, "  {name:<10} {v:>12.4}");
            }
            if !g.capped.is_empty() {
                let _ = writeln!(s, "  capped at search limit: {}", g.capped.join(", "));
            }
            let _ = writeln!(s, "  {:<24} {:>12} {:>12} {:>9}", "moment", "target", "fitted", "dev %");
            let (t, m) = (g.target.to_array(), g.fitted.to_array());
            for j in 0..7 {
                let _ = writeln!(s, "  {:<24} {:>12.5} {:>12.5} {:>9.2}", MOMENT_NAMES[j], t[j], m[j], g.pct_deviation[j]);
            }
        }
        let _ = writeln!(s, "\nstarts:");
        for t in &self.starts {
            let _ = writeln!(
                s,
                "  #{:<3} f0 {:>12.4e}  f {:>12.4e}  iters {:>4}  evals {:>6}  worst dev {:>8.2}%",
                t.index, t.initial_objective, t.final_objective, t.iterations, t.evaluations, t.max_pct_deviation
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smm::compute_moments;

    fn truth() -> (GroupModel, ScoreMap) {
        let m = build_model("g", &[2.89, 21.10, 0.32, 1.5, 3.2]).unwrap();
        (m, ScoreMap::from_slope(640.0, 20.0).unwrap())
    }

    #[test]
    fn objective_zero_at_target_and_linear_in_weights() {
        let (m, map) = truth();
        let sim = MomentSimulator::new(20_000, 3).unwrap();
        let t = sim.moments(&m, &map, None).unwrap();
        let w = [1.0; 7];
        assert_eq!(objective(&m, &map, &t, &w, &sim, None).unwrap(), 0.0);
        let other = build_model("g", &[2.5, 21.10, 0.32, 1.5, 3.2]).unwrap();
        let f1 = objective(&other, &map, &t, &w, &sim, None).unwrap();
        let f2 = objective(&other, &map, &t, &[2.0; 7], &sim, None).unwrap();
        assert!(f1 > 0.0);
        assert!((f2 - 2.0 * f1).abs() <= 1e-12 * f2);
        assert!(objective(&m, &map, &t, &[0.0; 7], &sim, None).is_err());
    }

    #[test]
    fn undefined_moments_get_penalty() {
        let (m, map) = truth();
        let sim = MomentSimulator::new(5_000, 3).unwrap();
        let t = sim.moments(&m, &map, None).unwrap();
        let far = GroupModel { threshold: -1e3, ..m };
        assert_eq!(objective(&far, &map, &t, &[1.0; 7], &sim, None).unwrap(), FAILURE_PENALTY);
    }

    #[test]
    fn latin_hypercube_strata() {
        let pts = latin_hypercube(10, 4);
        for d in 0..5 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 10.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn weighting_parse() {
        assert_eq!("slope-emphasis".parse::<Weighting>().unwrap(), Weighting::SlopeEmphasis);
        assert!("bogus".parse::<Weighting>().is_err());
    }

    #[test]
    fn recovers_fixed_map_problem() {
        let (m, map) = truth();
        // targets on the estimator's own draws, so the truth is an exact zero
        let t = compute_moments(&m, &map, 50_000, group_seed(1, 0), None).unwrap();
        let cfg = EstimationConfig {
            n: 50_000,
            seed: 1,
            starts: 2,
            max_iter: 60,
            fixed_map: Some(map),
            ..Default::default()
        };
        let r = estimate(&[GroupTarget::new("g", t)], &cfg).unwrap();
        let got = r.groups[0].params();
        let want = [2.89, 21.10, 0.32, 1.5, 3.2];
        for k in 0..5 {
            assert!((got[k] - want[k]).abs() / want[k] < 0.1, "{}: {} vs {}", PARAM_NAMES[k], got[k], want[k]);
        }
        for s in &r.starts {
            assert!(r.objective <= s.initial_objective);
        }
    }

    #[test]
    fn impossible_targets_fail() {
        let t = MomentVector::from_array([0.5, 0.9, 0.01, 700.0, 710.0, 0.5, 40.0]);
        let cfg = EstimationConfig {
            n: 5_000,
            starts: 1,
            max_iter: 3,
            ..Default::default()
        };
        assert!(matches!(estimate(&[GroupTarget::new("g", t)], &cfg), Err(Error::EstimationFailed(_))));
    }

    #[test]
    fn params_csv_roundtrip() {
        let (m, map) = truth();
        let t = compute_moments(&m, &map, 5_000, 3, None).unwrap();
        let cfg = EstimationConfig {
            n: 5_000,
            starts: 1,
            max_iter: 2,
            max_pct_deviation: f64::INFINITY,
            ..Default::default()
        };
        let r = estimate(&[GroupTarget::new("g", t)], &cfg).unwrap();
        let mut buf = Vec::new();
        r.write_params_csv(&mut buf).unwrap();
        let (models, back) = read_params_csv(buf.as_slice()).unwrap();
        assert_eq!(back, r.map);
        assert_eq!(models, r.models());
    }
}
