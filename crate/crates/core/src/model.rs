//! Structural primitives: latent risk types, noisy signals, the Bayesian
//! posterior, the default map and the score map, plus population sampling.
//!
//! Types live on a log-odds-of-repayment scale: higher `theta` is safer and
//! `default_prob(theta) = 1 / (1 + exp(theta))`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest number of signals a model may carry (credit score + composite).
pub const MAX_SIGNALS: usize = 2;

/// Normal prior over latent types: `theta ~ N(mu0, 1/h0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    pub mu0: f64,
    pub h0: f64,
}

impl RiskParams {
    pub fn new(mu0: f64, h0: f64) -> Result<Self> {
        let r = Self { mu0, h0 };
        r.validate()?;
        Ok(r)
    }

    /// Builds the prior from a mean and a variance.
    pub fn from_variance(mu0: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::param(format!("type variance must be positive, got {var}")));
        }
        Self::new(mu0, 1.0 / var)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() || !self.h0.is_finite() {
            return Err(Error::param("risk parameters must be finite"));
        }
        if self.h0 <= 0.0 {
            return Err(Error::param(format!("prior precision must be positive, got {}", self.h0)));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.h0
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Precisions of the observed signals. Index 0 is the credit score, index 1
/// (when present) the composite of everything else the lender sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    precisions: Vec<f64>,
}

impl SignalSpec {
    pub fn new(precisions: Vec<f64>) -> Result<Self> {
        if precisions.is_empty() || precisions.len() > MAX_SIGNALS {
            return Err(Error::param(format!(
                "between 1 and {MAX_SIGNALS} signals are supported, got {}",
                precisions.len()
            )));
        }
        for (k, &h) in precisions.iter().enumerate() {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::param(format!("signal {} precision must be positive and finite, got {h}", k + 1)));
            }
        }
        Ok(Self { precisions })
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precisions
    }

    pub fn len(&self) -> usize {
        self.precisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precisions.is_empty()
    }

    /// Sum of signal precisions.
    pub fn total(&self) -> f64 {
        self.precisions.iter().sum()
    }

    pub fn score_precision(&self) -> f64 {
        self.precisions[0]
    }

    /// Copy with the credit-score precision replaced.
    pub fn with_score_precision(&self, h1: f64) -> Result<Self> {
        let mut p = self.precisions.clone();
        p[0] = h1;
        Self::new(p)
    }

    /// Copy keeping only the credit-score signal.
    pub fn score_only(&self) -> Self {
        Self {
            precisions: vec![self.precisions[0]],
        }
    }
}

/// Affine map from predicted log odds of default to score units:
/// `score = a1 + a2 * log(delta(s) / (1 - delta(s))) = a1 - a2 * s`.
///
/// Scores rise with the signal, so `a2` must be negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub a1: f64,
    pub a2: f64,
}

impl ScoreMap {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        let m = Self { a1, a2 };
        m.validate()?;
        Ok(m)
    }

    /// Map with the given intercept and score points per unit of signal.
    pub fn from_slope(a1: f64, slope: f64) -> Result<Self> {
        Self::new(a1, -slope)
    }

    /// Affine map through two `(signal, score)` points.
    pub fn through_points(p: (f64, f64), q: (f64, f64)) -> Result<Self> {
        if p.0 == q.0 {
            return Err(Error::param("two-point fit needs distinct signal values"));
        }
        let slope = (q.1 - p.1) / (q.0 - p.0);
        Self::from_slope(p.1 - slope * p.0, slope)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a1.is_finite() || !self.a2.is_finite() {
            return Err(Error::param("score map coefficients must be finite"));
        }
        if self.a2 == 0.0 {
            return Err(Error::param("score map slope a2 must be non-zero"));
        }
        if self.a2 > 0.0 {
            return Err(Error::param(format!(
                "score must increase with the signal; a2 = {} implies a decreasing map",
                self.a2
            )));
        }
        Ok(())
    }

    /// Score points per unit of signal, `-a2`.
    pub fn slope(&self) -> f64 {
        -self.a2
    }

    pub fn score_of_signal(&self, s: f64) -> f64 {
        self.a1 + self.a2 * log_odds_default(s)
    }

    pub fn signal_of_score(&self, score: f64) -> f64 {
        (self.a1 - score) / self.a2
    }
}

/// Structural parameters of one applicant group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub label: String,
    pub risk: RiskParams,
    pub signals: SignalSpec,
    /// Approval cutoff on the posterior mean.
    pub threshold: f64,
}

impl GroupModel {
    pub fn new(label: impl Into<String>, risk: RiskParams, signals: SignalSpec, threshold: f64) -> Result<Self> {
        let m = Self {
            label: label.into(),
            risk,
            signals,
            threshold,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() {
            return Err(Error::param("group label must be non-empty"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::param("approval threshold must be finite"));
        }
        self.risk.validate()
    }

    /// Total precision of the posterior, `h0 + sum h_k`.
    pub fn posterior_precision(&self) -> f64 {
        self.risk.h0 + self.signals.total()
    }

    /// Standard deviation of the posterior mean across applicants.
    pub fn posterior_mean_sd(&self) -> f64 {
        let h = self.signals.total();
        (h / (self.risk.h0 * (self.risk.h0 + h))).sqrt()
    }

    pub fn posterior(&self, signals: &[f64]) -> Result<f64> {
        posterior(signals, &self.signals, &self.risk)
    }
}

/// Bayesian posterior mean of the type given signals.
pub fn posterior(signals: &[f64], spec: &SignalSpec, risk: &RiskParams) -> Result<f64> {
    if signals.len() != spec.len() {
        return Err(Error::Dimension {
            what: "signals",
            expected: spec.len(),
            got: signals.len(),
        });
    }
    risk.validate()?;
    let mut num = risk.h0 * risk.mu0;
    let mut den = risk.h0;
    for (&s, &h) in signals.iter().zip(spec.precisions()) {
        if !(h > 0.0) {
            return Err(Error::param(format!("signal precision must be positive, got {h}")));
        }
        num += h * s;
        den += h;
    }
    Ok(num / den)
}

/// Default probability of a type; strictly decreasing in `theta`.
pub fn default_prob(theta: f64) -> f64 {
    // both branches avoid overflow in exp
    if theta >= 0.0 {
        let e = (-theta).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + theta.exp())
    }
}

/// `log(delta / (1 - delta))` at `theta`, which is exactly `-theta`.
pub fn log_odds_default(theta: f64) -> f64 {
    -theta
}

pub fn score_of_signal(s: f64, map: &ScoreMap) -> Result<f64> {
    map.validate()?;
    Ok(map.score_of_signal(s))
}

pub fn signal_of_score(score: f64, map: &ScoreMap) -> Result<f64> {
    map.validate()?;
    Ok(map.signal_of_score(score))
}

/// Standard-normal and uniform draws behind a population. Holding these fixed
/// while parameters move gives common random numbers.
#[derive(Clone, Debug)]
pub struct StandardDraws {
    pub seed: u64,
    pub z_theta: Vec<f64>,
    pub z_noise: [Vec<f64>; MAX_SIGNALS],
    pub u_default: Vec<f64>,
}

impl StandardDraws {
    /// Per applicant, in order: type shock, one shock per signal slot, and the
    /// default uniform. All slots are drawn even for single-signal models so the
    /// layout is the same for every model.
    pub fn generate(n: usize, seed: u64) -> Self {
        let blocks: Vec<[Vec<f64>; 4]> = map_chunks(n, |stream, len| {
            let mut rng = rng::substream(seed, stream);
            let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(len));
            for _ in 0..len {
                out[0].push(rng.sample(StandardNormal));
                out[1].push(rng.sample(StandardNormal));
                out[2].push(rng.sample(StandardNormal));
                out[3].push(rng.random::<f64>());
            }
            out
        });
        let mut z_theta = Vec::with_capacity(n);
        let mut z1 = Vec::with_capacity(n);
        let mut z2 = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        for [a, b, c, d] in blocks {
            z_theta.extend(a);
            z1.extend(b);
            z2.extend(c);
            u.extend(d);
        }
        Self {
            seed,
            z_theta,
            z_noise: [z1, z2],
            u_default: u,
        }
    }

    pub fn len(&self) -> usize {
        self.z_theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_theta.is_empty()
    }
}

/// Runs `f(stream, len)` for every chunk of `n` and returns results in chunk
/// order, in parallel when the `parallel` feature is on.
pub(crate) fn map_chunks<T: Send>(n: usize, f: impl Fn(u64, usize) -> T + Sync + Send) -> Vec<T> {
    let ranges: Vec<(u64, usize, usize)> = rng::chunks(n).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.par_iter().map(|&(c, s, e)| f(c, e - s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.iter().map(|&(c, s, e)| f(c, e - s)).collect()
    }
}

/// Ordered map over independent jobs, in parallel when the `parallel`
/// feature is on.
pub(crate) fn map_jobs<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Applicant {
    pub theta: f64,
    signals: [f64; MAX_SIGNALS],
    k: u8,
    pub posterior: f64,
    pub score: f64,
    pub defaulted: bool,
}

impl Applicant {
    pub fn new(theta: f64, signals: &[f64], posterior: f64, score: f64, defaulted: bool) -> Result<Self> {
        if signals.is_empty() || signals.len() > MAX_SIGNALS {
            return Err(Error::Dimension {
                what: "applicant signals",
                expected: MAX_SIGNALS,
                got: signals.len(),
            });
        }
        let mut s = [0.0; MAX_SIGNALS];
        s[..signals.len()].copy_from_slice(signals);
        Ok(Self {
            theta,
            signals: s,
            k: signals.len() as u8,
            posterior,
            score,
            defaulted,
        })
    }

    pub fn signals(&self) -> &[f64] {
        &self.signals[..self.k as usize]
    }

    pub fn default_prob(&self) -> f64 {
        default_prob(self.theta)
    }
}

/// Simulated applicants for one group.
#[derive(Clone, Debug)]
pub struct Population {
    pub model: GroupModel,
    pub map: ScoreMap,
    pub seed: u64,
    pub applicants: Vec<Applicant>,
}

impl Population {
    /// Realizes a population from fixed standard draws.
    pub fn from_draws(model: &GroupModel, map: &ScoreMap, draws: &StandardDraws) -> Result<Self> {
        model.validate()?;
        map.validate()?;
        if draws.is_empty() {
            return Err(Error::arg("n must be ≥ 1"));
        }
        let risk = model.risk;
        let hs = model.signals.precisions();
        let k = hs.len();
        let sd_theta = risk.sd();
        let sd_noise: Vec<f64> = hs.iter().map(|h| (1.0 / h).sqrt()).collect();
        let den = model.posterior_precision();
        let applicants = (0..draws.len())
            .map(|i| {
                let theta = risk.mu0 + sd_theta * draws.z_theta[i];
                let mut s = [0.0; MAX_SIGNALS];
                let mut num = risk.h0 * risk.mu0;
                for j in 0..k {
                    s[j] = theta + sd_noise[j] * draws.z_noise[j][i];
                    num += hs[j] * s[j];
                }
                Applicant {
                    theta,
                    signals: s,
                    k: k as u8,
                    posterior: num / den,
                    score: map.score_of_signal(s[0]),
                    defaulted: draws.u_default[i] < default_prob(theta),
                }
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            map: *map,
            seed: draws.seed,
            applicants,
        })
    }

    pub fn len(&self) -> usize {
        self.applicants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applicants.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.applicants.iter().map(|a| a.score).collect()
    }

    pub fn defaults(&self) -> Vec<bool> {
        self.applicants.iter().map(|a| a.defaulted).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (id, a) in self.applicants.iter().enumerate() {
            w.serialize(PopulationRow::from_applicant(id, &self.model.label, a))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Writes several populations to one CSV, ids restarting per group.
pub fn write_populations_csv<W: Write>(pops: &[Population], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in pops {
        for (id, a) in p.applicants.iter().enumerate() {
            w.serialize(PopulationRow::from_applicant(id, &p.model.label, a))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Draws a population of `n` applicants; deterministic in `(model, map, n, seed)`.
pub fn sample_population(model: &GroupModel, map: &ScoreMap, n: usize, seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::arg("n must be ≥ 1"));
    }
    Population::from_draws(model, map, &StandardDraws::generate(n, seed))
}

/// One CSV row of an exported population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub id: u64,
    pub group: String,
    pub theta: f64,
    pub s1: f64,
    pub s2: Option<f64>,
    pub posterior: f64,
    pub score: f64,
    pub defaulted: u8,
}

impl PopulationRow {
    fn from_applicant(id: usize, group: &str, a: &Applicant) -> Self {
        let s = a.signals();
        Self {
            id: id as u64,
            group: group.to_string(),
            theta: a.theta,
            s1: s[0],
            s2: s.get(1).copied(),
            posterior: a.posterior,
            score: a.score,
            defaulted: a.defaulted as u8,
        }
    }

    pub fn to_applicant(&self) -> Result<Applicant> {
        let signals: Vec<f64> = std::iter::once(self.s1).chain(self.s2).collect();
        if self.defaulted > 1 {
            return Err(Error::Validation(format!("row {}: defaulted must be 0 or 1", self.id)));
        }
        Applicant::new(self.theta, &signals, self.posterior, self.score, self.defaulted == 1)
    }
}

/// Reads population rows (any number of groups) from CSV with a header.
pub fn read_population_csv<R: Read>(input: R) -> Result<Vec<PopulationRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<PopulationRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("population file has no rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn risk(mu0: f64, h0: f64) -> RiskParams {
        RiskParams::new(mu0, h0).unwrap()
    }

    #[test]
    fn posterior_examples() {
        let one = SignalSpec::new(vec![1.0]).unwrap();
        assert_abs_diff_eq!(posterior(&[2.0], &one, &risk(0.0, 1.0)).unwrap(), 1.0, epsilon = 1e-15);
        let two = SignalSpec::new(vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(posterior(&[3.0, 0.0], &two, &risk(0.0, 1.0)).unwrap(), 1.0, epsilon = 1e-15);
        let sharp = SignalSpec::new(vec![1e12]).unwrap();
        assert_abs_diff_eq!(posterior(&[5.0], &sharp, &risk(0.0, 1.0)).unwrap(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn posterior_errors() {
        let two = SignalSpec::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            posterior(&[1.0], &two, &risk(0.0, 1.0)),
            Err(Error::Dimension { expected: 2, got: 1, .. })
        ));
        assert!(SignalSpec::new(vec![0.0]).is_err());
        assert!(SignalSpec::new(vec![-1.0, 2.0]).is_err());
        assert!(SignalSpec::new(vec![]).is_err());
        assert!(RiskParams::new(0.0, 0.0).is_err());
        assert!(RiskParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn default_prob_examples() {
        assert_eq!(default_prob(0.0), 0.5);
        assert_abs_diff_eq!(default_prob(3f64.ln()), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(default_prob(2.89), 0.0526, epsilon = 1e-4);
        assert!(default_prob(800.0) >= 0.0 && default_prob(-800.0) <= 1.0);
        assert_abs_diff_eq!(default_prob(1.3) + default_prob(-1.3), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn score_map_examples() {
        let m = ScoreMap::new(0.0, -1.0).unwrap();
        assert_eq!(m.score_of_signal(3.0), 3.0);
        let m = ScoreMap::new(650.0, -12.5).unwrap();
        for s in [-5.0, 0.0, 5.0] {
            assert_abs_diff_eq!(m.signal_of_score(m.score_of_signal(s)), s, epsilon = 1e-12);
        }
        assert!(ScoreMap::new(1.0, 0.0).is_err());
        assert!(ScoreMap::new(1.0, 2.0).is_err());
    }

    #[test]
    fn two_point_fit_is_increasing() {
        // approved applicants have the higher mean signal and the higher mean score
        let m = ScoreMap::through_points((-1.5, 655.0), (2.0, 694.0)).unwrap();
        assert!(m.slope() > 0.0);
        assert_abs_diff_eq!(m.score_of_signal(2.0), 694.0, epsilon = 1e-9);
        assert!(ScoreMap::through_points((2.0, 655.0), (-1.5, 694.0)).is_err());
    }

    #[test]
    fn zero_n_rejected() {
        let g = GroupModel::new("g", risk(0.0, 1.0), SignalSpec::new(vec![1.0]).unwrap(), 0.0).unwrap();
        let err = sample_population(&g, &ScoreMap::new(0.0, -1.0).unwrap(), 0, 1).unwrap_err();
        assert_eq!(err.to_string(), "invalid argument: n must be ≥ 1");
    }

    #[test]
    fn degenerate_prior_collapses_types() {
        let g = GroupModel::new("g", risk(1.5, 1e12), SignalSpec::new(vec![1.0, 2.0]).unwrap(), 0.0).unwrap();
        let pop = sample_population(&g, &ScoreMap::new(0.0, -1.0).unwrap(), 5000, 3).unwrap();
        assert!(pop.applicants.iter().all(|a| (a.theta - 1.5).abs() < 1e-5));
    }

    #[test]
    fn csv_roundtrip() {
        let g = GroupModel::new("minority", risk(1.0, 0.2), SignalSpec::new(vec![0.5, 1.0]).unwrap(), 0.5).unwrap();
        let pop = sample_population(&g, &ScoreMap::new(600.0, -10.0).unwrap(), 50, 9).unwrap();
        let mut buf = Vec::new();
        pop.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,group,theta,s1,s2,posterior,score,defaulted\n"));
        let rows = read_population_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 50);
        for (row, a) in rows.iter().zip(&pop.applicants) {
            assert_eq!(&row.to_applicant().unwrap(), a);
        }
    }
}
