//! WebAssembly bindings behind `www/index.html`.
//!
//! Each exported function takes plain numbers and returns a JSON string so the
//! page needs no bundler. The `*_report` functions hold the logic and are
//! usable (and tested) natively.

use noisescreen::metrics::{auc, log_odds_r2, roc_curve};
use noisescreen::quadrature::{expected_default, GaussHermite, MARGINAL_NODES};
use noisescreen::screening::{run_all_counterfactuals, CfReport};
use noisescreen::{sample_population, GroupModel, Result, RiskParams, ScoreMap, SignalSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Browser runs are capped so a slider drag stays interactive.
pub const MAX_N: usize = 200_000;
const ROC_POINTS: usize = 200;

// Fitted two-group configuration shipped with the CLI example.
const MAP: (f64, f64) = (663.515, -11.6318);
const NON_MINORITY: (f64, f64, f64, f64) = (2.89, 28.73, 0.50, 2.6283);
const MINORITY: (f64, f64, f64, f64) = (1.13, 15.96, 2.46, 3.0665);
const OTHER_SIGNAL_VAR: f64 = 1.0e4;

#[derive(Debug, Serialize)]
pub struct RocGroup {
    pub var_score: f64,
    pub auc: f64,
    pub log_odds_slope: f64,
    pub log_odds_r2: f64,
    /// `[fpr, tpr]` pairs.
    pub roc: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct RocReport {
    pub groups: Vec<RocGroup>,
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_N {
        return Err(noisescreen::Error::Argument(format!("n must be in 1..={MAX_N}")));
    }
    Ok(())
}

fn map() -> ScoreMap {
    ScoreMap::new(MAP.0, MAP.1).expect("demo map is valid")
}

/// Two score-only groups with the same type distribution and different score
/// noise: AUC, binned log-odds slope and ROC curve for each.
pub fn roc_report(mu0: f64, var_theta: f64, var_score_a: f64, var_score_b: f64, n: usize, seed: u64) -> Result<RocReport> {
    check_n(n)?;
    let risk = RiskParams::from_variance(mu0, var_theta)?;
    let map = map();
    let mut groups = Vec::new();
    for (g, var_score) in [var_score_a, var_score_b].into_iter().enumerate() {
        let signals = SignalSpec::new(vec![1.0 / var_score])?;
        let model = GroupModel::new(format!("group {}", g + 1), risk, signals, mu0)?;
        let pop = sample_population(&model, &map, n, seed)?;
        let (scores, bad) = (pop.scores(), pop.defaults());
        let fit = log_odds_r2(&scores, &bad)?;
        let roc = roc_curve(&scores, &bad)?.thinned(ROC_POINTS);
        groups.push(RocGroup {
            var_score,
            auc: auc(&scores, &bad)?,
            log_odds_slope: fit.slope,
            log_odds_r2: fit.r2,
            roc: roc.points.iter().map(|p| [p.fpr, p.tpr]).collect(),
        });
    }
    Ok(RocReport { groups })
}

fn group(label: &str, p: (f64, f64, f64, f64)) -> Result<GroupModel> {
    let (mu0, var_theta, var_score, threshold) = p;
    GroupModel::new(
        label,
        RiskParams::from_variance(mu0, var_theta)?,
        SignalSpec::new(vec![1.0 / var_score, 1.0 / OTHER_SIGNAL_VAR])?,
        threshold,
    )
}

/// Baseline, remove-other-signal and equalize-score-precision outcomes for
/// the example groups, with the minority score-noise variance replaced.
pub fn counterfactual_report(minority_var_score: f64, gamma: f64, n: usize, seed: u64) -> Result<Vec<CfReport>> {
    check_n(n)?;
    let (mu0, var_theta, _, threshold) = MINORITY;
    let models = vec![
        group("non-minority", NON_MINORITY)?,
        group("minority", (mu0, var_theta, minority_var_score, threshold))?,
    ];
    run_all_counterfactuals(&models, &map(), "non-minority", gamma, n, seed)
}

#[derive(Debug, Serialize)]
pub struct ApplicantReport {
    pub signal: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
    /// Default probability at the posterior mean type.
    pub plug_in_default: f64,
    /// Default probability integrated over the posterior.
    pub expected_default: f64,
    pub score_weight: f64,
}

/// What a lender infers about one applicant from a credit score and a
/// second signal (on the type scale).
pub fn applicant_report(mu0: f64, var_theta: f64, var_score: f64, var_other: f64, score: f64, other: f64) -> Result<ApplicantReport> {
    let risk = RiskParams::from_variance(mu0, var_theta)?;
    let signals = SignalSpec::new(vec![1.0 / var_score, 1.0 / var_other])?;
    let signal = map().signal_of_score(score);
    let posterior_mean = noisescreen::posterior(&[signal, other], &signals, &risk)?;
    let precision = risk.h0 + signals.total();
    let rule = GaussHermite::new(MARGINAL_NODES);
    Ok(ApplicantReport {
        signal,
        posterior_mean,
        posterior_sd: precision.recip().sqrt(),
        plug_in_default: noisescreen::default_prob(posterior_mean),
        expected_default: expected_default(posterior_mean, precision.recip(), &rule),
        score_weight: signals.score_precision() / precision,
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn roc_vs_noise(mu0: f64, var_theta: f64, var_score_a: f64, var_score_b: f64, n: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_json(roc_report(mu0, var_theta, var_score_a, var_score_b, n, seed))
}

#[wasm_bindgen]
pub fn counterfactuals(minority_var_score: f64, gamma: f64, n: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_json(counterfactual_report(minority_var_score, gamma, n, seed))
}

#[wasm_bindgen]
pub fn applicant(mu0: f64, var_theta: f64, var_score: f64, var_other: f64, score: f64, other: f64) -> std::result::Result<String, JsError> {
    to_json(applicant_report(mu0, var_theta, var_score, var_other, score, other))
}
