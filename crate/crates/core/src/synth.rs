//! Synthetic populations with known tolerance knees.
//!
//! Each user has a concave piecewise-linear expected-utility curve
//! `U(E) = clamp(u0 + a·min(E, E*) − b·max(0, E − E*), 0, 1)` peaking at the
//! knee `E*`. Events draw `E` uniformly over the axis range and a binary
//! utility from `Bernoulli(clamp(U(E) + N(0, σ²), 0, 1))`. The output uses the
//! same event type as real evaluations, so the detector sees no difference.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{stratify_lengths, Stratum};
use crate::metrics::{Axis, RecommendationEvent, UtilityProxy};
use crate::saturation::{
    assign_quantiles, population_summary, profile_all, DetectionConfig, PopulationSummary,
    QuantileScheme, RuleFired, SaturationProfile,
};
use crate::textio;

pub const SPECS_HEADER: &str =
    "user_idx,knee,rise,fall,base,noise,n_events,history_length,oracle_quantile,out_of_range";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUserSpec {
    pub user: u32,
    /// Knee `E*`, in axis units.
    pub knee: f64,
    /// Slope `a` below the knee.
    pub rise: f64,
    /// Slope `b` above the knee.
    pub fall: f64,
    pub base: f64,
    pub noise: f64,
    pub n_events: usize,
    pub history_length: usize,
}

impl SynthUserSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Config(format!(
                "synthetic user {}: {what}",
                self.user
            )))
        };
        if !self.knee.is_finite() {
            return bad("knee must be finite");
        }
        // rise = 0 is allowed so flat (plateau) users can be expressed
        if !(self.rise >= 0.0 && self.rise.is_finite()) {
            return bad("rise slope must be non-negative");
        }
        if !(self.fall >= 0.0 && self.fall.is_finite()) {
            return bad("fall slope must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.base) {
            return bad("base utility must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        if self.n_events == 0 {
            return bad("n_events must be positive");
        }
        Ok(())
    }

    /// Expected utility at exploration level `e`.
    pub fn utility(&self, e: f64) -> f64 {
        let u = self.base + self.rise * e.min(self.knee) - self.fall * (e - self.knee).max(0.0);
        u.clamp(0.0, 1.0)
    }

    /// Exact mean of `U(E)` for `E` uniform on `[lo, hi]`.
    pub fn mean_utility(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return self.utility(lo);
        }
        // U is linear between these points, so trapezoids are exact.
        let mut xs = vec![lo, hi, self.knee];
        if self.rise > 0.0 {
            xs.push((0.0 - self.base) / self.rise);
            xs.push((1.0 - self.base) / self.rise);
        }
        if self.fall > 0.0 {
            let top = self.base + self.rise * self.knee;
            xs.push(self.knee + top / self.fall);
            xs.push(self.knee + (top - 1.0) / self.fall);
        }
        xs.retain(|x| x.is_finite() && *x >= lo && *x <= hi);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let area: f64 = xs
            .windows(2)
            .map(|w| 0.5 * (self.utility(w[0]) + self.utility(w[1])) * (w[1] - w[0]))
            .sum();
        area / (hi - lo)
    }
}

/// Range the exploration level is drawn from. Both event axes carry the
/// drawn value, so the range must lie within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl Default for AxisRange {
    fn default() -> Self {
        Self { min: 0.0, max: 1.0 }
    }
}

impl AxisRange {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min && self.min < self.max && self.max <= 1.0) {
            return Err(Error::Config(format!(
                "synthetic axis range [{}, {}] must satisfy 0 <= min < max <= 1",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream per user, stable under reordering of the specs.
pub fn user_seed(seed: u64, user: u32) -> u64 {
    splitmix64(seed ^ splitmix64(user as u64))
}

fn generate_user(spec: &SynthUserSpec, range: AxisRange, seed: u64) -> Vec<RecommendationEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, spec.user));
    (0..spec.n_events)
        .map(|t| {
            let e = rng.random_range(range.min..range.max);
            let z: f64 = rng.sample(StandardNormal);
            let p = (spec.utility(e) + spec.noise * z).clamp(0.0, 1.0);
            let hit = rng.random_bool(p);
            RecommendationEvent {
                user: spec.user,
                t,
                anchor: t,
                top_k: Vec::new(),
                entropy: e,
                unseen: e,
                hit,
                cont: hit,
                quantile: None,
                cold: false,
                truncated: false,
                terminal: false,
            }
        })
        .collect()
}

/// Events for every spec, grouped by user in spec order.
pub fn generate_population(
    specs: &[SynthUserSpec],
    range: AxisRange,
    seed: u64,
) -> Result<Vec<RecommendationEvent>> {
    if specs.is_empty() {
        return Err(Error::Config("no synthetic users".into()));
    }
    range.validate()?;
    let mut ids = HashSet::new();
    for s in specs {
        s.validate()?;
        if !ids.insert(s.user) {
            return Err(Error::Config(format!(
                "synthetic user {} listed twice",
                s.user
            )));
        }
    }
    let per_user: Vec<Vec<RecommendationEvent>> = specs
        .par_iter()
        .map(|s| generate_user(s, range, seed))
        .collect();
    Ok(per_user.into_iter().flatten().collect())
}

/// Quantile of `scheme` containing the knee, and whether the knee lies
/// outside the observed range (then the nearest end quantile is returned).
pub fn oracle_knee_quantile(spec: &SynthUserSpec, scheme: &QuantileScheme) -> (u32, bool) {
    let out = spec.knee < scheme.min || spec.knee > scheme.max;
    (scheme.label(spec.knee), out)
}

/// Knees uniform on `[0.25, 0.75]`; utility rises from 0.1 to a peak of 0.9 at
/// the knee, then falls three times as steeply (clamped at 0). History length
/// grows with the knee so short histories saturate early.
///
/// The steep fall matters: with a fall no steeper than the rise, a knee near
/// the top of its quantile leaves the next quantile's mean level with (or
/// above) the knee quantile's, and the first non-positive delta can land two
/// quantiles past the knee.
pub fn reference_population(n_users: usize, seed: u64) -> Vec<SynthUserSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_users)
        .map(|i| {
            let knee: f64 = rng.random_range(0.25..0.75);
            let jitter: f64 = rng.random_range(0.0..50.0);
            SynthUserSpec {
                user: i as u32,
                knee,
                rise: 0.8 / knee,
                fall: 2.4 / knee,
                base: 0.1,
                noise: 0.05,
                n_events: 500,
                history_length: (20.0 + 400.0 * knee + jitter).round() as usize,
            }
        })
        .collect()
}

/// Users who always consume regardless of exploration: a flat curve with no
/// noise, so every marginal effect is exactly zero.
pub fn plateau_population(n_users: usize) -> Vec<SynthUserSpec> {
    (0..n_users)
        .map(|i| SynthUserSpec {
            user: i as u32,
            knee: 0.5,
            rise: 0.0,
            fall: 0.0,
            base: 1.0,
            noise: 0.0,
            n_events: 500,
            history_length: 100 + i,
        })
        .collect()
}

/// Strata from `history_length`, indexed by user id.
pub fn spec_strata(specs: &[SynthUserSpec]) -> Vec<Stratum> {
    let lengths: Vec<usize> = specs.iter().map(|s| s.history_length).collect();
    let (_, by_spec) = stratify_lengths(&lengths);
    let n = specs.iter().map(|s| s.user as usize + 1).max().unwrap_or(0);
    let mut strata = vec![Stratum::Short; n];
    for (s, st) in specs.iter().zip(by_spec) {
        strata[s.user as usize] = st;
    }
    strata
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserValidation {
    pub user: u32,
    pub oracle: u32,
    pub out_of_range: bool,
    pub detected: Option<u32>,
    pub rule: RuleFired,
    pub insufficient: bool,
}

impl UserValidation {
    pub fn recovered(&self) -> bool {
        self.detected.is_some_and(|d| d.abs_diff(self.oracle) <= 1)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub scheme: QuantileScheme,
    pub users: Vec<UserValidation>,
    pub profiles: Vec<SaturationProfile>,
    pub summary: PopulationSummary,
}

impl ValidationReport {
    /// Share of users detected within ±1 quantile of their knee quantile.
    pub fn recovery_rate(&self) -> f64 {
        let hits = self.users.iter().filter(|u| u.recovered()).count();
        hits as f64 / self.users.len() as f64
    }

    pub fn out_of_range(&self) -> usize {
        self.users.iter().filter(|u| u.out_of_range).count()
    }

    /// Users per rule label (`insufficient` counted separately).
    pub fn rule_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for u in &self.users {
            let key = if u.insufficient {
                "insufficient"
            } else {
                u.rule.as_str()
            };
            *m.entry(key).or_default() += 1;
        }
        m
    }
}

/// Runs the detector on synthetic events (global quantiles of the entropy
/// column, hit proxy) and compares against every spec's knee quantile.
pub fn validate_detector(
    specs: &[SynthUserSpec],
    events: &[RecommendationEvent],
    n_quantiles: usize,
    detection: &DetectionConfig,
) -> Result<ValidationReport> {
    let mut events = events.to_vec();
    let scheme = assign_quantiles(&mut events, n_quantiles, Axis::Entropy)?;
    let profiles = profile_all(
        &events,
        scheme.n_quantiles(),
        Axis::Entropy,
        UtilityProxy::Hit,
        detection,
    )?;
    let by_user: BTreeMap<u32, &SaturationProfile> = profiles.iter().map(|p| (p.user, p)).collect();
    let users = specs
        .iter()
        .map(|s| {
            let (oracle, out_of_range) = oracle_knee_quantile(s, &scheme);
            let p = by_user.get(&s.user).ok_or_else(|| {
                Error::Integrity(format!("no events for synthetic user {}", s.user))
            })?;
            Ok(UserValidation {
                user: s.user,
                oracle,
                out_of_range,
                detected: p.saturation_index,
                rule: p.rule,
                insufficient: p.insufficient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = population_summary(&profiles, &spec_strata(specs), scheme.n_quantiles())?;
    Ok(ValidationReport {
        scheme,
        users,
        profiles,
        summary,
    })
}

/// Specs plus their oracle quantile under `scheme`.
pub fn write_specs(path: &Path, specs: &[SynthUserSpec], scheme: &QuantileScheme) -> Result<()> {
    let mut w = textio::create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{SPECS_HEADER}").map_err(io)?;
    for s in specs {
        let (q, out) = oracle_knee_quantile(s, scheme);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{q},{}",
            s.user,
            s.knee,
            s.rise,
            s.fall,
            s.base,
            s.noise,
            s.n_events,
            s.history_length,
            out as u8
        )
        .map_err(io)?;
    }
    textio::finish(path, w)
}

/// Reads specs back; the oracle columns are ignored (they are recomputed).
pub fn read_specs(path: &Path) -> Result<Vec<SynthUserSpec>> {
    let mut specs = Vec::new();
    textio::for_each_line(path, |line_no, line| {
        if line_no == 1 {
            if line.trim_end() != SPECS_HEADER {
                return Err(Error::parse(path, line_no, "unexpected header"));
            }
            return Ok(());
        }
        if line.trim().is_empty() {
            return Ok(());
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 10 fields, got {}", f.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad number {:?}", f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad integer {:?}", f[i])))
        };
        specs.push(SynthUserSpec {
            user: int(0)? as u32,
            knee: num(1)?,
            rise: num(2)?,
            fall: num(3)?,
            base: num(4)?,
            noise: num(5)?,
            n_events: int(6)?,
            history_length: int(7)?,
        });
        Ok(())
    })?;
    if specs.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(specs)
}
