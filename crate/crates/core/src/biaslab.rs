//! Logistic testbed for modeling-bias experiments: pooled, group-split,
//! equal-size split and re-weighted training on synthetic two-group data.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::rng;

pub const MAJORITY: &str = "majority";
pub const MINORITY: &str = "minority";
/// Majority rows generated per minority row.
pub const MAJORITY_RATIO: usize = 4;

/// Quadrant of the (feature distribution, conditional expectation) grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioTag {
    #[serde(rename = "same-X-same-CEF")]
    SameXSameCef,
    #[serde(rename = "same-X-diff-CEF")]
    SameXDiffCef,
    #[serde(rename = "diff-X-same-CEF")]
    DiffXSameCef,
    #[serde(rename = "diff-X-diff-CEF")]
    DiffXDiffCef,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 4] = [
        ScenarioTag::SameXSameCef,
        ScenarioTag::SameXDiffCef,
        ScenarioTag::DiffXSameCef,
        ScenarioTag::DiffXDiffCef,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioTag::SameXSameCef => "same-X-same-CEF",
            ScenarioTag::SameXDiffCef => "same-X-diff-CEF",
            ScenarioTag::DiffXSameCef => "diff-X-same-CEF",
            ScenarioTag::DiffXDiffCef => "diff-X-diff-CEF",
        }
    }

    pub fn diff_x(&self) -> bool {
        matches!(self, ScenarioTag::DiffXSameCef | ScenarioTag::DiffXDiffCef)
    }

    pub fn diff_cef(&self) -> bool {
        matches!(self, ScenarioTag::SameXDiffCef | ScenarioTag::DiffXDiffCef)
    }

    /// True logit coefficients `[intercept, x1, x2]` for a group.
    pub fn coefficients(&self, group: &str) -> [f64; 3] {
        if group == MINORITY && self.diff_cef() {
            [-1.2, -0.5, 0.6]
        } else {
            [-1.5, 1.2, -0.8]
        }
    }

    /// Feature mean and standard deviation for a group.
    pub fn features(&self, group: &str) -> ([f64; 2], f64) {
        if group == MINORITY && self.diff_x() {
            ([0.8, -0.6], 1.3)
        } else {
            ([0.0, 0.0], 1.0)
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioTag::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub features: Vec<f64>,
    pub bad: bool,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub rows: Vec<FeatureRow>,
    pub scenario: Option<ScenarioTag>,
}

impl FeatureDataset {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.rows.first() else {
            return Err(Error::InsufficientData("empty dataset".into()));
        };
        let d = first.features.len();
        if let Some(r) = self.rows.iter().find(|r| r.features.len() != d) {
            return Err(Error::Dimension {
                what: "feature row",
                expected: d,
                got: r.features.len(),
            });
        }
        let groups = self.groups();
        if groups.len() < 2 {
            return Err(Error::Validation("both groups must be present".into()));
        }
        Ok(())
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }
}

/// Two-dimensional Gaussian features with a logistic outcome rule per group.
/// The minority group has `n_per_group` rows and the majority
/// `MAJORITY_RATIO` times as many. Groups differ in feature law when the
/// scenario has different X, and in coefficients when it has different CEFs.
pub fn make_scenario(tag: ScenarioTag, n_per_group: usize, seed: u64) -> Result<FeatureDataset> {
    if n_per_group == 0 {
        return Err(Error::arg("n must be ≥ 1"));
    }
    let mut r = rng::aux_stream(seed, 0x4249_4153);
    let mut rows = Vec::with_capacity(n_per_group * (MAJORITY_RATIO + 1));
    for (group, n) in [(MAJORITY, n_per_group * MAJORITY_RATIO), (MINORITY, n_per_group)] {
        let (mean, sd) = tag.features(group);
        let beta = tag.coefficients(group);
        for _ in 0..n {
            let x: Vec<f64> = mean.iter().map(|m| m + sd * r.sample::<f64, _>(StandardNormal)).collect();
            let eta = beta[0] + beta[1] * x[0] + beta[2] * x[1];
            let bad = r.random::<f64>() < logistic(eta);
            rows.push(FeatureRow {
                features: x,
                bad,
                group: group.to_string(),
            });
        }
    }
    Ok(FeatureDataset { rows, scenario: Some(tag) })
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Coefficient magnitude beyond which the likelihood is treated as separated.
pub const COEF_CAP: f64 = 30.0;
const MAX_IRLS_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub separated: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        logistic(eta)
    }
}

/// Weighted maximum likelihood by iteratively reweighted least squares with
/// step halving. The log likelihood is normalized by the total weight, so
/// duplicating every row leaves the fit unchanged. Stops when the gradient
/// norm drops below 1e-8. If a coefficient exceeds [`COEF_CAP`] the data are
/// reported as separated and coefficients are clamped.
pub fn train_logistic(rows: &[&FeatureRow], weights: Option<&[f64]>) -> Result<LogisticModel> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let d = rows[0].features.len() + 1;
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension {
                what: "weights",
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("weights must be non-negative"));
        }
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::arg("weights sum to zero"));
    }
    let n_bad = rows.iter().zip(&w).filter(|(r, &wi)| r.bad && wi > 0.0).count();
    let n_good = rows.iter().zip(&w).filter(|(r, &wi)| !r.bad && wi > 0.0).count();
    if n_bad == 0 || n_good == 0 {
        return Err(Error::InsufficientData("training data need both outcomes".into()));
    }
    for j in 0..d - 1 {
        let first = rows[0].features[j];
        if rows.iter().all(|r| r.features[j] == first) {
            return Err(Error::Validation(format!("feature {j} is constant")));
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { rows[i].features[j - 1] });
    let y: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.bad))).collect();

    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &x * beta;
        (0..n)
            .map(|i| {
                let e = eta[i];
                // log(1 + exp(e)) computed stably
                let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                w[i] * (y[i] * e - softplus)
            })
            .sum::<f64>()
            / total
    };

    let mut beta = DVector::zeros(d);
    let mut ll = loglik(&beta);
    let mut separated = false;
    for it in 1..=MAX_IRLS_ITER {
        let eta = &x * &beta;
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..n {
            let p = logistic(eta[i]);
            let wi = w[i] / total;
            let row = x.row(i);
            grad += row.transpose() * (wi * (y[i] - p));
            let v = wi * p * (1.0 - p);
            hess += row.transpose() * row * v;
        }
        if grad.norm() < GRAD_TOL {
            return Ok(LogisticModel {
                coefficients: beta.iter().copied().collect(),
                separated,
                iterations: it - 1,
            });
        }
        let Some(chol) = hess.clone().cholesky() else {
            separated = true;
            break;
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let l = loglik(&cand);
            if l >= ll - 1e-15 {
                beta = cand;
                ll = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta.iter().any(|b| b.abs() > COEF_CAP) {
            separated = true;
            break;
        }
        if it == MAX_IRLS_ITER {
            return Err(Error::Numerical("logistic regression did not converge".into()));
        }
    }
    Ok(LogisticModel {
        coefficients: beta.iter().map(|b| b.clamp(-COEF_CAP, COEF_CAP)).collect(),
        separated,
        iterations: MAX_IRLS_ITER,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Pooled,
    Split,
    SplitSameN,
    Reweighted,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [TrainMode::Pooled, TrainMode::Split, TrainMode::SplitSameN, TrainMode::Reweighted];

    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::Pooled => "pooled",
            TrainMode::Split => "split",
            TrainMode::SplitSameN => "split-same-n",
            TrainMode::Reweighted => "reweighted",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::arg(format!("unknown training mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub scenario: String,
    /// Seed of the train/test split.
    pub seed: u64,
    pub mode: TrainMode,
    pub group: String,
    pub auc: f64,
    pub mse: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Row indices of a 70/30 split stratified by group and outcome.
pub fn train_test_split(data: &FeatureDataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::aux_stream(seed, 0x5350_4c54);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for g in data.groups() {
        for bad in [false, true] {
            let mut idx: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].group == g && data.rows[i].bad == bad).collect();
            idx.shuffle(&mut r);
            let k = (0.7 * idx.len() as f64).round() as usize;
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains per `mode` on the 70% split and reports per-group AUC and mean
/// squared error of predicted default probabilities on the held-out 30%.
///
/// `split-same-n` trains each group on a random subsample of its training
/// rows equal in size to the smallest group's; `reweighted` trains one
/// pooled model with weights that give each group equal total weight.
pub fn run_bias_experiment(data: &FeatureDataset, mode: TrainMode, seed: u64) -> Result<Vec<BiasRow>> {
    data.validate()?;
    let (train, test) = train_test_split(data, seed);
    let groups = data.groups();
    let rows_of = |idx: &[usize], g: &str| -> Vec<usize> { idx.iter().copied().filter(|&i| data.rows[i].group == g).collect() };

    let mut models: Vec<(String, LogisticModel, usize)> = Vec::new();
    match mode {
        TrainMode::Pooled | TrainMode::Reweighted => {
            let rows: Vec<&FeatureRow> = train.iter().map(|&i| &data.rows[i]).collect();
            let weights = (mode == TrainMode::Reweighted).then(|| {
                let counts: Vec<usize> = groups.iter().map(|g| rows.iter().filter(|r| &r.group == g).count()).collect();
                let n = rows.len() as f64;
                rows.iter()
                    .map(|r| {
                        let k = groups.iter().position(|g| g == &r.group).unwrap();
                        n / (groups.len() as f64 * counts[k] as f64)
                    })
                    .collect::<Vec<f64>>()
            });
            let model = train_logistic(&rows, weights.as_deref())?;
            for g in &groups {
                models.push((g.clone(), model.clone(), rows.len()));
            }
        }
        TrainMode::Split | TrainMode::SplitSameN => {
            let min_n = groups.iter().map(|g| rows_of(&train, g).len()).min().unwrap_or(0);
            let mut r = rng::aux_stream(seed, 0x5341_4d45);
            for g in &groups {
                let mut idx = rows_of(&train, g);
                if mode == TrainMode::SplitSameN {
                    idx.shuffle(&mut r);
                    idx.truncate(min_n);
                    idx.sort_unstable();
                }
                let rows: Vec<&FeatureRow> = idx.iter().map(|&i| &data.rows[i]).collect();
                models.push((g.clone(), train_logistic(&rows, None)?, rows.len()));
            }
        }
    }

    let scenario = data.scenario.map_or_else(|| "custom".to_string(), |t| t.label().to_string());
    models
        .into_iter()
        .map(|(g, model, n_train)| {
            let idx = rows_of(&test, &g);
            let p: Vec<f64> = idx.iter().map(|&i| model.predict(&data.rows[i].features)).collect();
            let bad: Vec<bool> = idx.iter().map(|&i| data.rows[i].bad).collect();
            let score: Vec<f64> = p.iter().map(|v| -v).collect();
            let mse = p.iter().zip(&bad).map(|(pi, &b)| (pi - f64::from(u8::from(b))).powi(2)).sum::<f64>() / p.len().max(1) as f64;
            Ok(BiasRow {
                scenario: scenario.clone(),
                seed,
                mode,
                group: g,
                auc: auc(&score, &bad)?,
                mse,
                n_train,
                n_test: idx.len(),
            })
        })
        .collect()
}

/// AUC per group of the true logit index on the whole dataset.
pub fn oracle_auc(data: &FeatureDataset) -> Result<Vec<(String, f64)>> {
    let tag = data.scenario.ok_or_else(|| Error::arg("oracle needs a generated scenario"))?;
    data.groups()
        .into_iter()
        .map(|g| {
            let beta = tag.coefficients(&g);
            let rows: Vec<&FeatureRow> = data.rows.iter().filter(|r| r.group == g).collect();
            let score: Vec<f64> = rows.iter().map(|r| -(beta[1] * r.features[0] + beta[2] * r.features[1])).collect();
            let bad: Vec<bool> = rows.iter().map(|r| r.bad).collect();
            Ok((g, auc(&score, &bad)?))
        })
        .collect()
}

pub fn write_bias_csv<W: Write>(rows: &[BiasRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
