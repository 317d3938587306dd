//! Run configuration: a versioned TOML document with shared model settings
//! and one optional table per subcommand. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use noisescreen::biaslab::{ScenarioTag, TrainMode};
use noisescreen::econometrics::PanelConfig;
use noisescreen::smm::{FreeParams, Weighting, MAX_PCT_DEVIATION};
use noisescreen::{GroupModel, RiskParams, ScoreMap, SignalSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GAMMA: f64 = 0.40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Mandatory; `--seed` overrides it but there is no clock-based default.
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<MapConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PanelRunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_lab: Option<BiasLabConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub a1: f64,
    pub a2: f64,
}

/// Group parameters. Simulation and counterfactuals need every field;
/// estimation holds the fields named in `estimate.fix` at these values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_other: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl GroupConfig {
    /// Values of the named parameters; every name must have a value.
    pub fn fixed(&self, names: &[String]) -> CliResult<FreeParams> {
        let mut f = FreeParams::default();
        for name in names {
            let (slot, value) = match name.as_str() {
                "mu0" => (&mut f.mu0, self.mu0),
                "var_theta" => (&mut f.var_theta, self.var_theta),
                "var_score" => (&mut f.var_score, self.var_score),
                "var_other" => (&mut f.var_other, self.var_other),
                "threshold" => (&mut f.threshold, self.threshold),
                other => return Err(CliError::config(format!("cannot fix unknown parameter '{other}'"))),
            };
            *slot = Some(value.ok_or_else(|| CliError::config(format!("group {}: {name} is fixed but has no value", self.label)))?);
        }
        Ok(f)
    }

    pub fn model(&self) -> CliResult<GroupModel> {
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| CliError::config(format!("group {}: missing {name}", self.label)));
        let risk = RiskParams::from_variance(need("mu0", self.mu0)?, need("var_theta", self.var_theta)?)?;
        let signals = SignalSpec::new(vec![1.0 / need("var_score", self.var_score)?, 1.0 / need("var_other", self.var_other)?])?;
        Ok(GroupModel::new(self.label.clone(), risk, signals, need("threshold", self.threshold)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Applicants per group.
    pub n: usize,
    /// Trim scores by the Cramér–von Mises rule before computing moments.
    #[serde(default)]
    pub truncation: bool,
    /// Write the applicant-level population file.
    #[serde(default = "yes")]
    pub write_population: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Target moments CSV (moment file schema).
    pub targets: PathBuf,
    #[serde(default = "default_estimate_n")]
    pub n: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub weighting: Weighting,
    /// Trim each group's empirical scores before matching; needs `scores`.
    #[serde(default)]
    pub truncation: bool,
    /// Applicant-level CSV with `group` and `score` columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    /// Hold the score map at `[map]` instead of fitting it.
    #[serde(default)]
    pub fixed_map: bool,
    #[serde(default = "default_max_pct")]
    pub max_pct_deviation: f64,
    /// Parameters held at their `[[groups]]` values (names as in the params table).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fix: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualConfig {
    /// Parameter table from `estimate`; without it `[[groups]]` and `[map]` are used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    /// Group whose score precision the equalize scenario copies; defaults to the first group.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// CSV with `score` and `defaulted` (or `bad`) columns and an optional `group` column.
    pub input: PathBuf,
    #[serde(default = "default_roc_points")]
    pub roc_points: usize,
    /// Optional decomposition cells CSV (`label,auc_a,auc_b,share_a,share_b`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<PathBuf>,
    /// Rescale decomposition shares to sum to one per group.
    #[serde(default)]
    pub normalize_shares: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelRunConfig {
    pub groups: Vec<PanelConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasLabConfig {
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<ScenarioTag>,
    #[serde(default = "all_modes")]
    pub modes: Vec<TrainMode>,
    pub n_per_group: usize,
    #[serde(default = "one")]
    pub replications: u64,
}

pub const FIXABLE: [&str; 5] = ["mu0", "var_theta", "var_score", "var_other", "threshold"];

impl EstimateConfig {
    pub fn validate(&self) -> CliResult<()> {
        for name in &self.fix {
            if !FIXABLE.contains(&name.as_str()) {
                return Err(CliError::config(format!("cannot fix unknown parameter '{name}' (expected one of {})", FIXABLE.join(", "))));
            }
        }
        Ok(())
    }
}

fn yes() -> bool {
    true
}
fn one() -> u64 {
    1
}
fn default_estimate_n() -> usize {
    200_000
}
fn default_starts() -> usize {
    8
}
fn default_max_iter() -> usize {
    200
}
fn default_max_pct() -> f64 {
    MAX_PCT_DEVIATION
}
fn default_roc_points() -> usize {
    1000
}
fn all_scenarios() -> Vec<ScenarioTag> {
    ScenarioTag::ALL.to_vec()
}
fn all_modes() -> Vec<TrainMode> {
    TrainMode::ALL.to_vec()
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {}", e.message())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads the file, applies overrides and makes the input paths of
    /// `command` absolute; inputs of other subcommands are left untouched.
    pub fn load(path: &Path, overrides: &Overrides, command: &str) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if overrides.seed.is_some() {
            cfg.seed = overrides.seed;
        }
        if overrides.gamma.is_some() {
            cfg.gamma = overrides.gamma;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base, command)?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path, command: &str) -> CliResult<()> {
        let mut paths: Vec<&mut PathBuf> = Vec::new();
        match command {
            "estimate" => {
                if let Some(e) = &mut self.estimate {
                    paths.push(&mut e.targets);
                    if let Some(s) = &mut e.scores {
                        paths.push(s);
                    }
                }
            }
            "counterfactual" => {
                if let Some(p) = self.counterfactual.as_mut().and_then(|c| c.params.as_mut()) {
                    paths.push(p);
                }
            }
            "metrics" => {
                if let Some(m) = &mut self.metrics {
                    paths.push(&mut m.input);
                    if let Some(d) = &mut m.decomposition {
                        paths.push(d);
                    }
                }
            }
            _ => {}
        }
        for p in paths {
            *p = resolve(base, p)?;
        }
        Ok(())
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::config("seed is required (set `seed` in the config or pass --seed)"))
    }

    pub fn gamma(&self) -> CliResult<f64> {
        let g = self.gamma.unwrap_or(DEFAULT_GAMMA);
        if !(0.0..=1.0).contains(&g) {
            return Err(CliError::config(format!("gamma = {g} outside [0, 1]")));
        }
        Ok(g)
    }

    pub fn score_map(&self) -> CliResult<ScoreMap> {
        let m = self.map.ok_or_else(|| CliError::config("missing [map] table"))?;
        Ok(ScoreMap::new(m.a1, m.a2)?)
    }

    pub fn models(&self) -> CliResult<Vec<GroupModel>> {
        if self.groups.is_empty() {
            return Err(CliError::config("no [[groups]] defined"));
        }
        let mut seen = BTreeMap::new();
        for g in &self.groups {
            if seen.insert(g.label.as_str(), ()).is_some() {
                return Err(CliError::config(format!("duplicate group label '{}'", g.label)));
            }
        }
        self.groups.iter().map(GroupConfig::model).collect()
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        section.as_ref().ok_or_else(|| CliError::config(format!("missing [{name}] table")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn resolve(base: &Path, p: &Path) -> CliResult<PathBuf> {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    joined
        .canonicalize()
        .map_err(|e| CliError::config(format!("cannot resolve {}: {e}", joined.display())))
}
