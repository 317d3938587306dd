//! Two-way fixed-effects OLS and just-identified 2SLS on lender panels, with
//! analytic weights and geography-clustered standard errors, plus a
//! synthetic exam-window panel with planted default rates.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One bank × geography × time × group observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelCell {
    pub bank: u32,
    pub geo: u32,
    pub time: u32,
    pub group: String,
    pub exam: u8,
    pub eligible: u8,
    /// Originated loan volume.
    pub q: f64,
    /// Defaulted loan volume.
    pub y: f64,
    pub weight: f64,
}

impl PanelCell {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::Validation(format!("cell weight {} must be positive", self.weight)));
        }
        if !(self.y >= 0.0 && self.q >= self.y) || !self.q.is_finite() {
            return Err(Error::Validation(format!("need q >= y >= 0, got q = {}, y = {}", self.q, self.y)));
        }
        if self.exam > 1 || self.eligible > 1 {
            return Err(Error::Validation("exam and eligible are 0/1 indicators".into()));
        }
        Ok(())
    }

    pub fn instrument(&self) -> f64 {
        f64::from(self.exam * self.eligible)
    }
}

pub fn read_panel_csv<R: Read>(input: R) -> Result<Vec<PanelCell>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize::<PanelCell>() {
        let row = row?;
        row.validate()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_panel_csv<W: Write>(cells: &[PanelCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-effect structure, cluster ids and weights for a set of observations.
#[derive(Clone, Debug)]
pub struct FeDesign {
    /// Level index per observation, one vector per fixed-effect factor.
    pub factors: Vec<Vec<usize>>,
    pub clusters: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FeDesign {
    /// Bank × geography and geography × time effects (both within group),
    /// clustered by geography, weighted by the cell weights.
    pub fn panel(cells: &[PanelCell]) -> Self {
        let bg = index_by(cells.iter().map(|c| (c.group.clone(), c.bank, c.geo, 0u32)));
        let gt = index_by(cells.iter().map(|c| (c.group.clone(), u32::MAX, c.geo, c.time)));
        let geo = index_by(cells.iter().map(|c| c.geo));
        Self {
            factors: vec![bg, gt],
            clusters: geo,
            weights: cells.iter().map(|c| c.weight).collect(),
        }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InsufficientData("no observations".into()));
        }
        for f in self.factors.iter().chain(std::iter::once(&self.clusters)) {
            if f.len() != n {
                return Err(Error::Dimension {
                    what: "fixed-effect index",
                    expected: n,
                    got: f.len(),
                });
            }
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Validation("weights must be positive".into()));
        }
        Ok(())
    }

    /// Rank of the stacked fixed-effect dummies: total levels less one per
    /// connected component of the first two factors, and one for each further
    /// factor (assumed connected).
    pub fn absorbed_dof(&self) -> usize {
        let levels: Vec<usize> = self.factors.iter().map(|f| f.iter().max().map_or(0, |m| m + 1)).collect();
        let total: usize = levels.iter().sum();
        if self.factors.len() < 2 {
            return total;
        }
        let offset = levels[0];
        let mut parent: Vec<usize> = (0..levels[0] + levels[1]).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (a, b) in self.factors[0].iter().zip(&self.factors[1]) {
            let (ra, rb) = (find(&mut parent, *a), find(&mut parent, offset + b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let comps = (0..parent.len()).filter(|&x| find(&mut parent, x) == x).count();
        total - comps - (self.factors.len() - 2)
    }
}

fn index_by<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<usize> {
    let mut map = HashMap::new();
    keys.map(|k| {
        let next = map.len();
        *map.entry(k).or_insert(next)
    })
    .collect()
}

/// Sweep limit for alternating projections.
pub const MAX_SWEEPS: usize = 10_000;
/// Convergence tolerance on the largest weighted level mean, relative to the
/// column's largest absolute value (floored at 1).
pub const DEMEAN_TOL: f64 = 1e-10;

/// Removes weighted fixed effects from each column by alternating weighted
/// demeaning over the factors until every level mean is below tolerance.
pub fn within_transform(columns: &[Vec<f64>], design: &FeDesign) -> Result<Vec<Vec<f64>>> {
    design.validate()?;
    let n = design.len();
    let w = &design.weights;
    let level_weights: Vec<Vec<f64>> = design
        .factors
        .iter()
        .map(|f| {
            let mut s = vec![0.0; f.iter().max().map_or(0, |m| m + 1)];
            for (i, &l) in f.iter().enumerate() {
                s[l] += w[i];
            }
            s
        })
        .collect();
    columns
        .iter()
        .map(|col| {
            if col.len() != n {
                return Err(Error::Dimension {
                    what: "column",
                    expected: n,
                    got: col.len(),
                });
            }
            let mut x = col.clone();
            if design.factors.is_empty() {
                return Ok(x);
            }
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut means: Vec<Vec<f64>> = level_weights.iter().map(|l| vec![0.0; l.len()]).collect();
            for _ in 0..MAX_SWEEPS {
                for (k, f) in design.factors.iter().enumerate() {
                    let m = &mut means[k];
                    m.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..n {
                        m[f[i]] += w[i] * x[i];
                    }
                    for (v, lw) in m.iter_mut().zip(&level_weights[k]) {
                        *v /= lw;
                    }
                    for i in 0..n {
                        x[i] -= m[f[i]];
                    }
                }
                if design.factors.len() == 1 {
                    return Ok(x);
                }
                // the last factor is exact after its pass; check the others
                let worst = design.factors[..design.factors.len() - 1]
                    .iter()
                    .enumerate()
                    .map(|(k, f)| {
                        let m = &mut means[k];
                        m.iter_mut().for_each(|v| *v = 0.0);
                        for i in 0..n {
                            m[f[i]] += w[i] * x[i];
                        }
                        m.iter().zip(&level_weights[k]).map(|(v, lw)| (v / lw).abs()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                if worst < DEMEAN_TOL * scale {
                    return Ok(x);
                }
            }
            Err(Error::Numerical(format!("fixed-effect demeaning did not converge in {MAX_SWEEPS} sweeps")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeEstimate {
    pub coefficient: f64,
    pub clustered_se: f64,
    /// Robust Wald statistic for the coefficient (first stage only).
    pub f_stat: Option<f64>,
    pub n_cells: usize,
    pub n_clusters: usize,
    /// `1 - SSR / SST` on the demeaned data; negative values are possible for 2SLS.
    pub r2_within: f64,
}

impl FeEstimate {
    pub fn t_stat(&self) -> f64 {
        self.coefficient / self.clustered_se
    }

    pub fn covers(&self, truth: f64, k_se: f64) -> bool {
        (self.coefficient - truth).abs() <= k_se * self.clustered_se
    }
}

/// Just-identified weighted IV of `y` on `x` with instrument `z` after the
/// within transform: `b = z'Wy / z'Wx`. Passing `z = x` gives OLS.
///
/// The cluster-robust variance is the sandwich
/// `(z'Wx)^-2 sum_g (sum_{i in g} w_i z_i u_i)^2` with the finite-sample
/// factor `G/(G-1) (N-1)/(N-K)`, where `K` counts the slope and the rank of
/// the absorbed fixed effects.
pub fn iv_fe(y: &[f64], x: &[f64], z: &[f64], design: &FeDesign) -> Result<FeEstimate> {
    let cols = within_transform(&[y.to_vec(), x.to_vec(), z.to_vec()], design)?;
    check_not_absorbed(z, &cols[2], design)?;
    iv_demeaned(&cols[0], &cols[1], &cols[2], design)
}

/// Relative size below which a demeaned column counts as spanned by the
/// fixed effects.
const ABSORBED_TOL: f64 = 1e-12;

fn check_not_absorbed(raw: &[f64], demeaned: &[f64], design: &FeDesign) -> Result<()> {
    let w = &design.weights;
    let before: f64 = raw.iter().zip(w).map(|(v, w)| w * v * v).sum();
    let after: f64 = demeaned.iter().zip(w).map(|(v, w)| w * v * v).sum();
    if after <= ABSORBED_TOL * before {
        return Err(Error::WeakInstrument(0.0));
    }
    Ok(())
}

fn iv_demeaned(y: &[f64], x: &[f64], z: &[f64], design: &FeDesign) -> Result<FeEstimate> {
    let w = &design.weights;
    let n = y.len();
    let zx: f64 = (0..n).map(|i| w[i] * z[i] * x[i]).sum();
    let zy: f64 = (0..n).map(|i| w[i] * z[i] * y[i]).sum();
    let zz: f64 = (0..n).map(|i| w[i] * z[i] * z[i]).sum();
    let xx: f64 = (0..n).map(|i| w[i] * x[i] * x[i]).sum();
    if zz <= 1e-24 * (1.0 + xx) {
        return Err(Error::WeakInstrument(0.0));
    }
    if zx.abs() <= 1e-12 * (zz * xx).sqrt() {
        return Err(Error::WeakInstrument(0.0));
    }
    let b = zy / zx;
    let u: Vec<f64> = (0..n).map(|i| y[i] - b * x[i]).collect();
    let g_count = design.clusters.iter().max().map_or(0, |m| m + 1);
    let mut score = vec![0.0; g_count];
    for i in 0..n {
        score[design.clusters[i]] += w[i] * z[i] * u[i];
    }
    let meat: f64 = score.iter().map(|s| s * s).sum();
    let g = g_count as f64;
    let k = (1 + design.absorbed_dof()) as f64;
    let nf = n as f64;
    let factor = if g > 1.0 && nf > k { g / (g - 1.0) * (nf - 1.0) / (nf - k) } else { f64::NAN };
    let var = factor * meat / (zx * zx);
    let ssr: f64 = (0..n).map(|i| w[i] * u[i] * u[i]).sum();
    let sst: f64 = (0..n).map(|i| w[i] * y[i] * y[i]).sum();
    Ok(FeEstimate {
        coefficient: b,
        clustered_se: var.max(0.0).sqrt(),
        f_stat: None,
        n_cells: n,
        n_clusters: g_count,
        r2_within: if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN },
    })
}

/// First stage, reduced form and second stage of the exam-window design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvResult {
    pub first_stage: FeEstimate,
    pub reduced_form: FeEstimate,
    pub second_stage: FeEstimate,
}

/// 2SLS of defaulted volume on originated volume, instrumented by
/// exam × eligible, with bank × geography and geography × time effects.
pub fn tsls_fe(cells: &[PanelCell]) -> Result<IvResult> {
    let (design, y, q, z_raw) = panel_columns(cells)?;
    let cols = within_transform(&[y, q, z_raw.clone()], &design)?;
    check_not_absorbed(&z_raw, &cols[2], &design)?;
    let (y, q, z) = (&cols[0], &cols[1], &cols[2]);
    let mut first = iv_demeaned(q, z, z, &design)?;
    first.f_stat = Some(first.t_stat().powi(2));
    if first.coefficient == 0.0 {
        return Err(Error::WeakInstrument(first.f_stat.unwrap_or(0.0)));
    }
    let reduced = iv_demeaned(y, z, z, &design)?;
    let second = iv_demeaned(y, q, z, &design).map_err(|_| Error::WeakInstrument(first.f_stat.unwrap_or(0.0)))?;
    Ok(IvResult {
        first_stage: first,
        reduced_form: reduced,
        second_stage: second,
    })
}

/// Weighted OLS of defaulted on originated volume with the same effects.
pub fn ols_fe(cells: &[PanelCell]) -> Result<FeEstimate> {
    let (design, y, q, _) = panel_columns(cells)?;
    iv_fe(&y, &q, &q, &design)
}

type Columns = (FeDesign, Vec<f64>, Vec<f64>, Vec<f64>);

fn panel_columns(cells: &[PanelCell]) -> Result<Columns> {
    if cells.is_empty() {
        return Err(Error::InsufficientData("empty panel".into()));
    }
    for c in cells {
        c.validate()?;
    }
    Ok((
        FeDesign::panel(cells),
        cells.iter().map(|c| c.y).collect(),
        cells.iter().map(|c| c.q).collect(),
        cells.iter().map(PanelCell::instrument).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub group: String,
    pub n_banks: u32,
    pub n_geos: u32,
    pub n_periods: u32,
    /// Each bank is in an exam window every `exam_every` periods, staggered by bank.
    pub exam_every: u32,
    pub eligible_share: f64,
    /// Mean inframarginal originations per cell.
    pub base_volume: f64,
    pub avg_default: f64,
    pub marginal_default: f64,
    /// Mean extra originations in exam × eligible cells.
    pub exam_lift: f64,
    /// Standard deviation of the bank × geography and geography × time effects.
    pub effect_sd: f64,
    /// Standard deviation of idiosyncratic volume shocks.
    pub noise_sd: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            group: "minority".into(),
            n_banks: 10,
            n_geos: 40,
            n_periods: 12,
            exam_every: 4,
            eligible_share: 0.5,
            base_volume: 40.0,
            avg_default: 0.055,
            marginal_default: 0.069,
            exam_lift: 1.454,
            effect_sd: 6.0,
            noise_sd: 4.0,
        }
    }
}

impl PanelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("avg_default", self.avg_default),
            ("marginal_default", self.marginal_default),
            ("eligible_share", self.eligible_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_banks == 0 || self.n_geos < 2 || self.n_periods == 0 || self.exam_every == 0 {
            return Err(Error::param("panel needs banks, at least two geographies, periods and an exam cycle"));
        }
        if !(self.exam_lift >= 0.0) || !(self.base_volume > 0.0) || !(self.effect_sd >= 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::param("volumes and standard deviations must be non-negative"));
        }
        Ok(())
    }
}

/// Synthetic panel. Inframarginal volume in each cell is the base volume
/// plus bank × geography and geography × time effects and a shock, rounded
/// to whole loans; each of those loans defaults with probability
/// `avg_default`. Exam × eligible cells receive a Poisson(`exam_lift`) number
/// of extra loans that default with probability `marginal_default`. Weights
/// are each bank's share of total originations.
pub fn synth_panel(config: &PanelConfig, seed: u64) -> Result<Vec<PanelCell>> {
    config.validate()?;
    let mut r = rng::aux_stream(seed, 0x5041_4e45);
    let effect = Normal::new(0.0, config.effect_sd).map_err(|e| Error::param(e.to_string()))?;
    let shock = Normal::new(0.0, config.noise_sd).map_err(|e| Error::param(e.to_string()))?;
    let eligible: Vec<u8> = (0..config.n_geos).map(|_| u8::from(r.random::<f64>() < config.eligible_share)).collect();
    let bg: Vec<f64> = (0..config.n_banks * config.n_geos).map(|_| effect.sample(&mut r)).collect();
    let gt: Vec<f64> = (0..config.n_geos * config.n_periods).map(|_| effect.sample(&mut r)).collect();
    let lift = if config.exam_lift > 0.0 {
        Some(Poisson::new(config.exam_lift).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };
    let mut cells = Vec::with_capacity((config.n_banks * config.n_geos * config.n_periods) as usize);
    for b in 0..config.n_banks {
        for g in 0..config.n_geos {
            for t in 0..config.n_periods {
                let exam = u8::from((t + b) % config.exam_every == 0);
                let base = (config.base_volume
                    + bg[(b * config.n_geos + g) as usize]
                    + gt[(g * config.n_periods + t) as usize]
                    + shock.sample(&mut r))
                .round()
                .max(0.0) as u64;
                let extra = match (&lift, exam * eligible[g as usize]) {
                    (Some(p), 1) => p.sample(&mut r) as u64,
                    _ => 0,
                };
                let d_base = binomial(&mut r, base, config.avg_default)?;
                let d_extra = binomial(&mut r, extra, config.marginal_default)?;
                cells.push(PanelCell {
                    bank: b,
                    geo: g,
                    time: t,
                    group: config.group.clone(),
                    exam,
                    eligible: eligible[g as usize],
                    q: (base + extra) as f64,
                    y: (d_base + d_extra) as f64,
                    weight: 0.0,
                });
            }
        }
    }
    let total: f64 = cells.iter().map(|c| c.q).sum::<f64>().max(1.0);
    let mut bank_volume = vec![0.0; config.n_banks as usize];
    for c in &cells {
        bank_volume[c.bank as usize] += c.q;
    }
    for c in &mut cells {
        c.weight = (bank_volume[c.bank as usize] / total).max(1e-12);
    }
    Ok(cells)
}

fn binomial(r: &mut rng::Rng, n: u64, p: f64) -> Result<u64> {
    if n == 0 {
        return Ok(0);
    }
    Ok(Binomial::new(n, p).map_err(|e| Error::param(e.to_string()))?.sample(r))
}

#[derive(Serialize)]
struct RegressionRow<'a> {
    regression: &'a str,
    group: &'a str,
    coef: f64,
    se: f64,
    f: Option<f64>,
    n: usize,
    clusters: usize,
    r2_within: f64,
}

/// Regression table: first stage, reduced form, 2SLS and OLS for each group.
pub fn write_regression_csv<W: Write>(results: &[(String, IvResult, FeEstimate)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (group, iv, ols) in results {
        for (name, e) in [
            ("first_stage", &iv.first_stage),
            ("reduced_form", &iv.reduced_form),
            ("tsls", &iv.second_stage),
            ("ols", ols),
        ] {
            w.serialize(RegressionRow {
                regression: name,
                group,
                coef: e.coefficient,
                se: e.clustered_se,
                f: e.f_stat,
                n: e.n_cells,
                clusters: e.n_clusters,
                r2_within: e.r2_within,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PanelConfig {
        PanelConfig {
            n_banks: 3,
            n_geos: 6,
            n_periods: 4,
            exam_every: 2,
            ..Default::default()
        }
    }

    #[test]
    fn single_bank_geo_absorbs_everything() {
        let design = FeDesign {
            factors: vec![vec![0; 5], vec![0, 1, 2, 3, 4]],
            clusters: vec![0; 5],
            weights: vec![1.0; 5],
        };
        let out = within_transform(&[vec![3.0, 1.0, 4.0, 1.0, 5.0]], &design).unwrap();
        assert!(out[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_factor_is_group_demeaning() {
        let design = FeDesign {
            factors: vec![vec![0, 0, 1, 1, 1]],
            clusters: vec![0, 0, 1, 1, 1],
            weights: vec![1.0, 3.0, 1.0, 1.0, 2.0],
        };
        let x = vec![1.0, 2.0, 3.0, 5.0, 7.0];
        let out = within_transform(std::slice::from_ref(&x), &design).unwrap();
        let m0 = (1.0 + 6.0) / 4.0;
        let m1 = (3.0 + 5.0 + 14.0) / 4.0;
        let want = [1.0 - m0, 2.0 - m0, 3.0 - m1, 5.0 - m1, 7.0 - m1];
        for (a, b) in out[0].iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        // idempotent
        let again = within_transform(&out, &design).unwrap();
        for (a, b) in again[0].iter().zip(&out[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_proportional_outcome() {
        let mut cells = synth_panel(&small_config(), 1).unwrap();
        for c in &mut cells {
            c.y = 0.5 * c.q;
        }
        let e = ols_fe(&cells).unwrap();
        assert!((e.coefficient - 0.5).abs() < 1e-10);
        assert!(e.clustered_se < 1e-8);
    }

    #[test]
    fn instrument_equal_to_regressor_is_ols() {
        let cells = synth_panel(&small_config(), 2).unwrap();
        let d = FeDesign::panel(&cells);
        let y: Vec<f64> = cells.iter().map(|c| c.y).collect();
        let q: Vec<f64> = cells.iter().map(|c| c.q).collect();
        let a = iv_fe(&y, &q, &q, &d).unwrap();
        let b = ols_fe(&cells).unwrap();
        assert!((a.coefficient - b.coefficient).abs() < 1e-10);
    }

    #[test]
    fn ratio_identity_and_f_equals_t2() {
        let cells = synth_panel(&PanelConfig { exam_lift: 4.0, ..small_config() }, 3).unwrap();
        let iv = tsls_fe(&cells).unwrap();
        let lhs = iv.second_stage.coefficient * iv.first_stage.coefficient;
        assert!((lhs - iv.reduced_form.coefficient).abs() < 1e-10);
        let t = iv.first_stage.t_stat();
        assert!((iv.first_stage.f_stat.unwrap() - t * t).abs() < 1e-8 * t * t);
    }

    #[test]
    fn weight_rescaling_invariance() {
        let cells = synth_panel(&PanelConfig { exam_lift: 4.0, ..small_config() }, 4).unwrap();
        let scaled: Vec<PanelCell> = cells.iter().map(|c| PanelCell { weight: c.weight * 37.0, ..c.clone() }).collect();
        let (a, b) = (tsls_fe(&cells).unwrap(), tsls_fe(&scaled).unwrap());
        assert!((a.second_stage.coefficient - b.second_stage.coefficient).abs() < 1e-10);
        assert!((a.second_stage.clustered_se - b.second_stage.clustered_se).abs() < 1e-10);
    }

    #[test]
    fn equal_weights_match_unit_weights() {
        let cells = synth_panel(&small_config(), 5).unwrap();
        let unit: Vec<PanelCell> = cells.iter().map(|c| PanelCell { weight: 1.0, ..c.clone() }).collect();
        let half: Vec<PanelCell> = cells.iter().map(|c| PanelCell { weight: 0.5, ..c.clone() }).collect();
        assert_eq!(ols_fe(&unit).unwrap().coefficient, ols_fe(&half).unwrap().coefficient);
    }

    #[test]
    fn weak_instrument_detected() {
        let mut cells = synth_panel(&small_config(), 6).unwrap();
        for c in &mut cells {
            c.exam = 0;
        }
        assert!(matches!(tsls_fe(&cells), Err(Error::WeakInstrument(_))));
    }

    #[test]
    fn absorbed_rank_of_connected_two_way() {
        // 2 x 3 complete grid: 2 + 3 levels, one redundancy
        let design = FeDesign {
            factors: vec![vec![0, 0, 0, 1, 1, 1], vec![0, 1, 2, 0, 1, 2]],
            clusters: vec![0; 6],
            weights: vec![1.0; 6],
        };
        assert_eq!(design.absorbed_dof(), 4);
    }

    #[test]
    fn panel_csv_roundtrip() {
        let cells = synth_panel(&small_config(), 7).unwrap();
        let mut buf = Vec::new();
        write_panel_csv(&cells, &mut buf).unwrap();
        assert!(buf.starts_with(b"bank,geo,time,group,exam,eligible,q,y,weight\n"));
        assert_eq!(read_panel_csv(&buf[..]).unwrap(), cells);
    }

    #[test]
    fn invalid_cells_rejected() {
        let mut c = synth_panel(&small_config(), 8).unwrap().remove(0);
        c.y = c.q + 1.0;
        assert!(c.validate().is_err());
        assert!(synth_panel(&PanelConfig { avg_default: 1.5, ..small_config() }, 1).is_err());
    }
}
