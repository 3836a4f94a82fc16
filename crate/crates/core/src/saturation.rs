//! Exploration quantiles, per-user marginal utility, and saturation detection.
//!
//! Events are binned into `K` ordered quantiles of an exploration axis. For
//! each user the mean utility of every sufficiently populated quantile is
//! computed, and the marginal effect of moving one quantile up is the
//! difference between consecutive populated means. A user saturates at the
//! first quantile where either
//!
//! * **rule A**: `m` consecutive marginal effects are ≤ 0, or
//! * **rule B**: the marginal effect stays within `±eps` across a window of
//!   quantiles whose within-quantile utility variance does not decrease.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{median, Stratum};
use crate::metrics::{Axis, RecommendationEvent, UtilityProxy};
use crate::textio;

pub const DEFAULT_QUANTILES: usize = 10;
pub const PROFILES_HEADER: &str = "user_idx,stratum,n_events,sat_index,rule,deltas";
pub const CURVES_HEADER: &str = "model,dataset,k,mean_E,mean_U,delta_U,n_events,var_U";

/// Ordered exploration bins. Quantile `k` (1-based) holds values in
/// `(boundaries[k-2], boundaries[k-1]]`; a value equal to a boundary falls
/// into the lower quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileScheme {
    pub requested: usize,
    pub boundaries: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl QuantileScheme {
    /// Boundaries at the empirical `j/K` quantiles of `values`, deduplicated.
    ///
    /// With fewer distinct values than `K` the scheme has fewer quantiles;
    /// with a single distinct value it is degenerate (one quantile).
    pub fn from_values(values: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("number of quantiles must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::Integrity("no exploration values to bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("non-finite exploration value".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let (min, max) = (sorted[0], sorted[n - 1]);
        let mut boundaries: Vec<f64> = (1..k)
            .map(|j| {
                let rank = (j * n).div_ceil(k);
                sorted[rank.max(1) - 1]
            })
            .filter(|&b| b < max)
            .collect();
        boundaries.dedup();
        Ok(Self {
            requested: k,
            boundaries,
            min,
            max,
        })
    }

    pub fn n_quantiles(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Fewer quantiles than requested.
    pub fn reduced(&self) -> bool {
        self.n_quantiles() < self.requested
    }

    /// All values identical: a single quantile, saturation undefined.
    pub fn degenerate(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// 1-based quantile of `v`.
    pub fn label(&self, v: f64) -> u32 {
        self.boundaries.partition_point(|&b| b < v) as u32 + 1
    }

    /// Lower and upper edge of quantile `k`, using the observed range at the ends.
    pub fn interval(&self, k: u32) -> (f64, f64) {
        let k = k as usize;
        let lo = if k <= 1 {
            self.min
        } else {
            self.boundaries[k - 2]
        };
        let hi = if k > self.boundaries.len() {
            self.max
        } else {
            self.boundaries[k - 1]
        };
        (lo, hi)
    }
}

/// Whether quantiles are shared by all users or computed per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantileScope {
    #[default]
    Global,
    PerUser,
}

impl QuantileScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(QuantileScope::Global),
            "per-user" | "user" => Ok(QuantileScope::PerUser),
            other => Err(Error::Config(format!("unknown quantile scope {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantileScope::Global => "global",
            QuantileScope::PerUser => "per-user",
        }
    }
}

/// Labels every event with its global quantile.
pub fn assign_quantiles(
    events: &mut [RecommendationEvent],
    k: usize,
    axis: Axis,
) -> Result<QuantileScheme> {
    let values: Vec<f64> = events.iter().map(|e| e.axis_value(axis)).collect();
    let scheme = QuantileScheme::from_values(&values, k)?;
    for e in events.iter_mut() {
        e.quantile = Some(scheme.label(e.axis_value(axis)));
    }
    Ok(scheme)
}

/// Labels every event with a quantile computed over its own user's events.
/// Events must be grouped by user.
pub fn assign_quantiles_per_user(
    events: &mut [RecommendationEvent],
    k: usize,
    axis: Axis,
) -> Result<BTreeMap<u32, QuantileScheme>> {
    let mut schemes = BTreeMap::new();
    for group in events.chunk_by_mut(|a, b| a.user == b.user) {
        let values: Vec<f64> = group.iter().map(|e| e.axis_value(axis)).collect();
        let scheme = QuantileScheme::from_values(&values, k)?;
        for e in group.iter_mut() {
            e.quantile = Some(scheme.label(e.axis_value(axis)));
        }
        if schemes.insert(group[0].user, scheme).is_some() {
            return Err(Error::Integrity("events are not grouped by user".into()));
        }
    }
    Ok(schemes)
}

/// Sufficient statistics of one quantile.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantileStats {
    pub count: usize,
    pub sum_u: f64,
    pub sum_u2: f64,
    pub sum_e: f64,
}

impl QuantileStats {
    fn add(&mut self, e: f64, u: f64) {
        self.count += 1;
        self.sum_u += u;
        self.sum_u2 += u * u;
        self.sum_e += e;
    }

    pub fn mean_u(&self) -> f64 {
        self.sum_u / self.count as f64
    }

    pub fn mean_e(&self) -> f64 {
        self.sum_e / self.count as f64
    }

    /// Population variance of utility within the quantile.
    pub fn var_u(&self) -> f64 {
        let m = self.mean_u();
        (self.sum_u2 / self.count as f64 - m * m).max(0.0)
    }
}

/// Which detection rule determined the saturation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleFired {
    /// Rule A; `plateau` when every delta in the run is exactly zero.
    ConsecutiveNonPositive {
        plateau: bool,
    },
    /// Rule B.
    ConvergedUnstable,
    None,
}

impl RuleFired {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleFired::ConsecutiveNonPositive { plateau: false } => "A-decline",
            RuleFired::ConsecutiveNonPositive { plateau: true } => "A-plateau",
            RuleFired::ConvergedUnstable => "B",
            RuleFired::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    /// Consecutive non-positive deltas required by rule A.
    pub m: usize,
    /// Near-zero threshold on |ΔU| for rule B.
    pub eps: f64,
    /// Quantiles examined by rule B.
    pub variance_window: usize,
    pub min_events_per_quantile: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            m: 2,
            eps: 0.005,
            variance_window: 3,
            min_events_per_quantile: 5,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.variance_window == 0 {
            return Err(Error::Config("variance_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Marginal utility between two consecutively populated quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delta {
    /// The upper quantile of the pair.
    pub k: u32,
    pub value: f64,
    /// Utility variance within quantile `k`.
    pub var_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationProfile {
    pub user: u32,
    pub n_events: usize,
    /// Index `k - 1` holds quantile `k`.
    pub stats: Vec<QuantileStats>,
    pub populated: Vec<bool>,
    pub deltas: Vec<Delta>,
    /// Fewer than two populated quantiles; excluded from detection.
    pub insufficient: bool,
    pub saturation_index: Option<u32>,
    pub rule: RuleFired,
}

impl SaturationProfile {
    /// `(k, Ū(Q_k))` for every populated quantile.
    pub fn means(&self) -> Vec<(u32, f64)> {
        self.stats
            .iter()
            .zip(&self.populated)
            .enumerate()
            .filter(|(_, (_, &p))| p)
            .map(|(i, (s, _))| (i as u32 + 1, s.mean_u()))
            .collect()
    }
}

/// Means and deltas for one user's (quantile-labelled) events.
pub fn profile_user<'a>(
    user: u32,
    events: impl IntoIterator<Item = &'a RecommendationEvent>,
    n_quantiles: usize,
    min_events: usize,
    axis: Axis,
    proxy: UtilityProxy,
) -> Result<SaturationProfile> {
    let mut stats = vec![QuantileStats::default(); n_quantiles];
    let mut n_events = 0;
    for e in events {
        let q = e.quantile.ok_or_else(|| {
            Error::Integrity(format!("event {} of user {user} has no quantile", e.t))
        })? as usize;
        if q == 0 || q > n_quantiles {
            return Err(Error::Integrity(format!(
                "quantile {q} outside 1..={n_quantiles}"
            )));
        }
        stats[q - 1].add(e.axis_value(axis), e.utility(proxy));
        n_events += 1;
    }
    let populated: Vec<bool> = stats
        .iter()
        .map(|s| s.count > 0 && s.count >= min_events)
        .collect();
    let mut deltas = Vec::new();
    let mut prev: Option<f64> = None;
    for (i, s) in stats.iter().enumerate() {
        if !populated[i] {
            continue;
        }
        let m = s.mean_u();
        if let Some(p) = prev {
            deltas.push(Delta {
                k: i as u32 + 1,
                value: m - p,
                var_u: s.var_u(),
            });
        }
        prev = Some(m);
    }
    Ok(SaturationProfile {
        user,
        n_events,
        insufficient: deltas.is_empty(),
        stats,
        populated,
        deltas,
        saturation_index: None,
        rule: RuleFired::None,
    })
}

/// Earliest quantile at which rule A or rule B fires (A wins ties).
pub fn detect_saturation(
    profile: &SaturationProfile,
    cfg: &DetectionConfig,
) -> (Option<u32>, RuleFired) {
    if profile.insufficient {
        return (None, RuleFired::None);
    }
    let d = &profile.deltas;
    let rule_a = (0..d.len())
        .find(|&j| j + cfg.m <= d.len() && d[j..j + cfg.m].iter().all(|x| x.value <= 0.0))
        .map(|j| (j, d[j..j + cfg.m].iter().all(|x| x.value == 0.0)));
    let w = cfg.variance_window;
    let rule_b = (0..d.len()).find(|&j| {
        j + w <= d.len()
            && d[j..j + w].iter().all(|x| x.value.abs() < cfg.eps)
            && d[j..j + w].windows(2).all(|p| p[0].var_u <= p[1].var_u)
    });
    match (rule_a, rule_b) {
        (Some((a, plateau)), b) if b.is_none_or(|b| a <= b) => {
            (Some(d[a].k), RuleFired::ConsecutiveNonPositive { plateau })
        }
        (_, Some(b)) => (Some(d[b].k), RuleFired::ConvergedUnstable),
        _ => (None, RuleFired::None),
    }
}

/// Profiles and detection for every user. Events must carry quantiles and be
/// grouped by user; output is in user order of first appearance.
pub fn profile_all(
    events: &[RecommendationEvent],
    n_quantiles: usize,
    axis: Axis,
    proxy: UtilityProxy,
    cfg: &DetectionConfig,
) -> Result<Vec<SaturationProfile>> {
    cfg.validate()?;
    let groups: Vec<&[RecommendationEvent]> = events.chunk_by(|a, b| a.user == b.user).collect();
    groups
        .par_iter()
        .map(|g| {
            let mut p = profile_user(
                g[0].user,
                g.iter(),
                n_quantiles,
                cfg.min_events_per_quantile,
                axis,
                proxy,
            )?;
            (p.saturation_index, p.rule) = detect_saturation(&p, cfg);
            Ok(p)
        })
        .collect()
}

/// One point of an aggregate utility-vs-exploration curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub k: u32,
    pub mean_e: f64,
    pub mean_u: f64,
    /// Versus the previous non-empty quantile.
    pub delta_u: Option<f64>,
    pub n_events: usize,
    pub var_u: f64,
}

/// Event-level aggregate per quantile (empty quantiles omitted).
pub fn aggregate_curve(
    events: &[RecommendationEvent],
    n_quantiles: usize,
    axis: Axis,
    proxy: UtilityProxy,
) -> Result<Vec<CurvePoint>> {
    let mut stats = vec![QuantileStats::default(); n_quantiles];
    for e in events {
        let q = e
            .quantile
            .ok_or_else(|| Error::Integrity("event without quantile".into()))?
            as usize;
        if q == 0 || q > n_quantiles {
            return Err(Error::Integrity(format!(
                "quantile {q} outside 1..={n_quantiles}"
            )));
        }
        stats[q - 1].add(e.axis_value(axis), e.utility(proxy));
    }
    Ok(curve_from_stats(&stats))
}

fn curve_from_stats(stats: &[QuantileStats]) -> Vec<CurvePoint> {
    let mut out: Vec<CurvePoint> = Vec::new();
    for (i, s) in stats.iter().enumerate() {
        if s.count == 0 {
            continue;
        }
        let mean_u = s.mean_u();
        out.push(CurvePoint {
            k: i as u32 + 1,
            mean_e: s.mean_e(),
            mean_u,
            delta_u: out.last().map(|p| mean_u - p.mean_u),
            n_events: s.count,
            var_u: s.var_u(),
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StratumSummary {
    /// Saturation index → number of users.
    pub histogram: BTreeMap<u32, usize>,
    pub saturated: usize,
    pub never: usize,
    pub insufficient: usize,
    pub median_index: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSummary {
    pub all: StratumSummary,
    pub short: StratumSummary,
    pub long: StratumSummary,
}

impl PopulationSummary {
    pub fn stratum(&self, s: Stratum) -> &StratumSummary {
        match s {
            Stratum::Short => &self.short,
            Stratum::Long => &self.long,
        }
    }
}

fn summarize<'a>(
    profiles: impl Iterator<Item = &'a SaturationProfile>,
    n_quantiles: usize,
) -> StratumSummary {
    let mut s = StratumSummary::default();
    let mut stats = vec![QuantileStats::default(); n_quantiles];
    let mut indices = Vec::new();
    for p in profiles {
        for (acc, q) in stats.iter_mut().zip(&p.stats) {
            acc.count += q.count;
            acc.sum_u += q.sum_u;
            acc.sum_u2 += q.sum_u2;
            acc.sum_e += q.sum_e;
        }
        if p.insufficient {
            s.insufficient += 1;
        } else if let Some(k) = p.saturation_index {
            s.saturated += 1;
            *s.histogram.entry(k).or_default() += 1;
            indices.push(k as f64);
        } else {
            s.never += 1;
        }
    }
    s.median_index = median(&indices);
    s.curve = curve_from_stats(&stats);
    s
}

/// Saturation histograms, regime counts and aggregate curves, overall and per
/// history-length stratum. `strata` is indexed by user.
pub fn population_summary(
    profiles: &[SaturationProfile],
    strata: &[Stratum],
    n_quantiles: usize,
) -> Result<PopulationSummary> {
    let stratum_of = |p: &SaturationProfile| {
        strata
            .get(p.user as usize)
            .copied()
            .ok_or_else(|| Error::Integrity(format!("user {} has no stratum", p.user)))
    };
    for p in profiles {
        stratum_of(p)?;
    }
    let pick = |want: Stratum| {
        profiles
            .iter()
            .filter(move |p| stratum_of(p).ok() == Some(want))
    };
    Ok(PopulationSummary {
        all: summarize(profiles.iter(), n_quantiles),
        short: summarize(pick(Stratum::Short), n_quantiles),
        long: summarize(pick(Stratum::Long), n_quantiles),
    })
}

/// `profiles.csv`: one row per user; `sat_index` is empty when the user never
/// saturates, and the trailing variable-width columns list every delta as
/// `k:value`.
pub fn write_profiles(
    path: &Path,
    profiles: &[SaturationProfile],
    strata: &[Stratum],
) -> Result<()> {
    let mut w = textio::create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{PROFILES_HEADER}").map_err(io)?;
    for p in profiles {
        let stratum = strata
            .get(p.user as usize)
            .ok_or_else(|| Error::Integrity(format!("user {} has no stratum", p.user)))?;
        let sat = p
            .saturation_index
            .map(|k| k.to_string())
            .unwrap_or_default();
        let rule = if p.insufficient {
            "insufficient"
        } else {
            p.rule.as_str()
        };
        write!(
            w,
            "{},{},{},{sat},{rule}",
            p.user,
            stratum.as_str(),
            p.n_events
        )
        .map_err(io)?;
        for d in &p.deltas {
            write!(w, ",{}:{}", d.k, d.value).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    textio::finish(path, w)
}

/// `curves.csv`: one row per (model, dataset, quantile); `delta_U` is empty
/// for the first quantile.
pub fn write_curves(path: &Path, rows: &[(&str, &str, &[CurvePoint])]) -> Result<()> {
    let mut w = textio::create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{CURVES_HEADER}").map_err(io)?;
    for (model, dataset, points) in rows {
        for p in points.iter() {
            let delta = p.delta_u.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{model},{dataset},{},{},{},{delta},{},{}",
                p.k, p.mean_e, p.mean_u, p.n_events, p.var_u
            )
            .map_err(io)?;
        }
    }
    textio::finish(path, w)
}
