//! One function per subcommand. Each reads what it needs from the resolved
//! config and returns the files to write plus the input files it consumed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use noisescreen::biaslab::{make_scenario, run_bias_experiment, write_bias_csv, BiasRow};
use noisescreen::econometrics::{ols_fe, synth_panel, tsls_fe, write_panel_csv, write_regression_csv};
use noisescreen::metrics::{
    auc, auc_decomposition, forward_regression, log_odds_r2, normalize_shares, reverse_regression, roc_curve, write_decomposition_csv,
    DecompositionCell,
};
use noisescreen::screening::{run_all_counterfactuals, write_cf_csv};
use noisescreen::smm::{
    compute_moments, estimate, group_seed, read_moments_csv, read_params_csv, select_truncation, write_moments_csv, EstimationConfig,
    GroupTarget, TruncationSpec,
};
use noisescreen::{sample_population, write_populations_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::Outputs;

pub struct JobOutput {
    pub outputs: Outputs,
    pub inputs: Vec<PathBuf>,
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))
}

fn check_n(n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::config("n must be ≥ 1"));
    }
    Ok(())
}

#[derive(Serialize)]
struct TruncationRow<'a> {
    group: &'a str,
    lower: f64,
    upper: f64,
    trimmed_mass: f64,
}

fn write_truncations(rows: &[(String, TruncationSpec)], out: &mut Vec<u8>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for (g, t) in rows {
        w.serialize(TruncationRow {
            group: g,
            lower: t.lower,
            upper: t.upper,
            trimmed_mass: t.trimmed_mass,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult<JobOutput> {
    let sim = cfg.section(&cfg.simulate, "simulate")?;
    check_n(sim.n)?;
    let seed = cfg.seed()?;
    let map = cfg.score_map()?;
    let models = cfg.models()?;
    let pops = models
        .iter()
        .enumerate()
        .map(|(g, m)| sample_population(m, &map, sim.n, group_seed(seed, g)))
        .collect::<noisescreen::Result<Vec<_>>>()?;
    let mut moments = Vec::new();
    let mut truncations = Vec::new();
    for (g, (m, pop)) in models.iter().zip(&pops).enumerate() {
        let trunc = if sim.truncation { Some(select_truncation(&pop.scores())?) } else { None };
        moments.push((m.label.clone(), compute_moments(m, &map, sim.n, group_seed(seed, g), trunc.as_ref())?));
        if let Some(t) = trunc {
            truncations.push((m.label.clone(), t));
        }
    }
    let mut out = Outputs::default();
    if sim.write_population {
        out.csv("population.csv", |b| write_populations_csv(&pops, b))?;
    }
    out.csv("moments.csv", |b| write_moments_csv(&moments, b))?;
    if sim.truncation {
        let mut buf = Vec::new();
        write_truncations(&truncations, &mut buf)?;
        out.add("truncation.csv", buf);
    }
    Ok(JobOutput { outputs: out, inputs: vec![] })
}

#[derive(Deserialize)]
struct ScoreRecord {
    #[serde(default)]
    group: Option<String>,
    score: f64,
    #[serde(alias = "bad")]
    defaulted: Option<u8>,
}

/// Scores and default flags per group label.
type GroupScores = BTreeMap<String, (Vec<f64>, Vec<bool>)>;

fn read_scores(path: &Path) -> CliResult<GroupScores> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut by_group: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for (i, row) in r.deserialize::<ScoreRecord>().enumerate() {
        let row = row.map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let entry = by_group.entry(row.group.unwrap_or_else(|| "all".into())).or_default();
        entry.0.push(row.score);
        match row.defaulted {
            Some(0) => entry.1.push(false),
            Some(1) => entry.1.push(true),
            Some(v) => return Err(CliError::config(format!("{} row {}: outcome {v} is not 0/1", path.display(), i + 1))),
            None => {}
        }
    }
    if by_group.is_empty() {
        return Err(CliError::config(format!("{} has no rows", path.display())));
    }
    Ok(by_group)
}

pub fn estimate_job(cfg: &RunConfig) -> CliResult<JobOutput> {
    let est = cfg.section(&cfg.estimate, "estimate")?;
    check_n(est.n)?;
    est.validate()?;
    let seed = cfg.seed()?;
    let rows = read_moments_csv(open(&est.targets)?)?;
    let mut inputs = vec![est.targets.clone()];
    for g in &cfg.groups {
        if !rows.iter().any(|(l, _)| l == &g.label) {
            return Err(CliError::config(format!("group '{}' has no row in {}", g.label, est.targets.display())));
        }
    }
    let scores = if est.truncation {
        let path = est
            .scores
            .as_ref()
            .ok_or_else(|| CliError::config("estimate.truncation needs estimate.scores"))?;
        inputs.push(path.clone());
        Some(read_scores(path)?)
    } else {
        None
    };
    let mut targets = Vec::with_capacity(rows.len());
    for (label, moments) in rows {
        let mut t = GroupTarget::new(label.clone(), moments);
        if let Some(g) = cfg.groups.iter().find(|g| g.label == label) {
            t.fixed = g.fixed(&est.fix)?;
        } else if !est.fix.is_empty() {
            return Err(CliError::config(format!("estimate.fix needs a [[groups]] entry for '{label}'")));
        }
        if let Some(scores) = &scores {
            let (s, _) = scores
                .get(&label)
                .ok_or_else(|| CliError::config(format!("no scores for group '{label}'")))?;
            t.truncation = Some(select_truncation(s)?);
        }
        targets.push(t);
    }
    let config = EstimationConfig {
        n: est.n,
        seed,
        starts: est.starts,
        max_iter: est.max_iter,
        weighting: est.weighting,
        fixed_map: if est.fixed_map { Some(cfg.score_map()?) } else { None },
        max_pct_deviation: est.max_pct_deviation,
        ..EstimationConfig::default()
    };
    let result = estimate(&targets, &config)?;
    let mut out = Outputs::default();
    out.csv("params.csv", |b| result.write_params_csv(b))?;
    out.csv("fitted_moments.csv", |b| result.write_moments_csv(b))?;
    out.add("starts.csv", table(&result.starts)?);
    out.add("report.txt", result.report().into_bytes());
    Ok(JobOutput { outputs: out, inputs })
}

pub fn counterfactual(cfg: &RunConfig) -> CliResult<JobOutput> {
    let cf = cfg.section(&cfg.counterfactual, "counterfactual")?;
    check_n(cf.n)?;
    let seed = cfg.seed()?;
    let gamma = cfg.gamma()?;
    let (models, map, inputs) = match &cf.params {
        Some(p) => {
            let (m, map) = read_params_csv(open(p)?)?;
            (m, map, vec![p.clone()])
        }
        None => (cfg.models()?, cfg.score_map()?, vec![]),
    };
    let reference = match &cf.reference {
        Some(r) => {
            if !models.iter().any(|m| &m.label == r) {
                return Err(CliError::config(format!("reference group '{r}' not found")));
            }
            r.clone()
        }
        None => models[0].label.clone(),
    };
    let reports = run_all_counterfactuals(&models, &map, &reference, gamma, cf.n, seed)?;
    let mut out = Outputs::default();
    out.csv("counterfactuals.csv", |b| write_cf_csv(&reports, b))?;
    Ok(JobOutput { outputs: out, inputs })
}

#[derive(Serialize)]
struct MetricRow<'a> {
    group: &'a str,
    n: usize,
    default_rate: f64,
    auc: f64,
    log_odds_r2: f64,
    log_odds_slope: f64,
    bins_used: usize,
    default_vs_score_slope: f64,
    score_vs_default_slope: f64,
}

#[derive(Serialize)]
struct RocRow<'a> {
    group: &'a str,
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

pub fn metrics_job(cfg: &RunConfig) -> CliResult<JobOutput> {
    let m = cfg.section(&cfg.metrics, "metrics")?;
    if m.roc_points < 2 {
        return Err(CliError::config("roc_points must be ≥ 2"));
    }
    let data = read_scores(&m.input)?;
    let mut inputs = vec![m.input.clone()];
    let mut summary = Vec::new();
    let mut roc_rows = Vec::new();
    for (group, (scores, bad)) in &data {
        if bad.len() != scores.len() {
            return Err(CliError::config(format!("{}: every row needs a defaulted/bad outcome", m.input.display())));
        }
        let fit = log_odds_r2(scores, bad)?;
        summary.push(MetricRow {
            group,
            n: scores.len(),
            default_rate: bad.iter().filter(|&&b| b).count() as f64 / bad.len() as f64,
            auc: auc(scores, bad)?,
            log_odds_r2: fit.r2,
            log_odds_slope: fit.slope,
            bins_used: fit.bins_used,
            default_vs_score_slope: forward_regression(scores, bad)?,
            score_vs_default_slope: reverse_regression(scores, bad)?,
        });
        for p in roc_curve(scores, bad)?.thinned(m.roc_points).points {
            roc_rows.push(RocRow {
                group,
                threshold: p.threshold,
                fpr: p.fpr,
                tpr: p.tpr,
            });
        }
    }
    let mut out = Outputs::default();
    out.add("metrics.csv", table(&summary)?);
    out.add("roc.csv", table(&roc_rows)?);
    if let Some(path) = &m.decomposition {
        inputs.push(path.clone());
        let cells: Vec<DecompositionCell> = csv::Reader::from_reader(open(path)?)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let cells = if m.normalize_shares { normalize_shares(&cells) } else { cells };
        let d = auc_decomposition(&cells)?;
        out.csv("decomposition.csv", |b| write_decomposition_csv(&cells, &d, b))?;
    }
    Ok(JobOutput { outputs: out, inputs })
}

fn table<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}

pub fn panel(cfg: &RunConfig) -> CliResult<JobOutput> {
    let p = cfg.section(&cfg.panel, "panel")?;
    if p.groups.is_empty() {
        return Err(CliError::config("panel.groups is empty"));
    }
    let seed = cfg.seed()?;
    let mut cells = Vec::new();
    let mut results = Vec::new();
    for (g, pc) in p.groups.iter().enumerate() {
        let panel = synth_panel(pc, group_seed(seed, g))?;
        let iv = tsls_fe(&panel)?;
        let ols = ols_fe(&panel)?;
        results.push((pc.group.clone(), iv, ols));
        cells.extend(panel);
    }
    let mut out = Outputs::default();
    out.csv("panel.csv", |b| write_panel_csv(&cells, b))?;
    out.csv("regressions.csv", |b| write_regression_csv(&results, b))?;
    Ok(JobOutput { outputs: out, inputs: vec![] })
}

pub fn bias_lab(cfg: &RunConfig) -> CliResult<JobOutput> {
    let b = cfg.section(&cfg.bias_lab, "bias_lab")?;
    check_n(b.n_per_group)?;
    if b.replications == 0 || b.scenarios.is_empty() || b.modes.is_empty() {
        return Err(CliError::config("bias_lab needs at least one scenario, mode and replication"));
    }
    let seed = cfg.seed()?;
    let jobs: Vec<_> = b
        .scenarios
        .iter()
        .flat_map(|&tag| (0..b.replications).map(move |r| (tag, r)))
        .collect();
    let rows: Vec<Vec<BiasRow>> = jobs
        .par_iter()
        .map(|&(tag, r)| -> noisescreen::Result<Vec<BiasRow>> {
            let s = group_seed(seed, r as usize);
            let data = make_scenario(tag, b.n_per_group, s)?;
            let mut rows = Vec::new();
            for &mode in &b.modes {
                rows.extend(run_bias_experiment(&data, mode, s)?);
            }
            Ok(rows)
        })
        .collect::<noisescreen::Result<_>>()?;
    let rows: Vec<BiasRow> = rows.into_iter().flatten().collect();
    let mut out = Outputs::default();
    out.csv("bias_lab.csv", |buf| write_bias_csv(&rows, buf))?;
    Ok(JobOutput { outputs: out, inputs: vec![] })
}
