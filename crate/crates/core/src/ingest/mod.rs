//! Interaction logs: parsing, temporal splitting, sessions, strata and item clusters.

mod catalog;
mod parse;
mod session;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use catalog::{
    build_catalog, read_catalog, write_catalog, Catalog, ClusterMode, GenreTable, ItemLabels,
};
pub use parse::{
    parse_lastfm, parse_movielens, parse_movies, read_log_cache, write_log_cache, LastfmLog,
    LOG_CACHE_FILE, LOG_HEADER,
};
pub use session::{sessionize, Session, SessionIndex, DEFAULT_GAP_SECONDS};

/// Default share of each user's history used for training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// One timestamped user–item event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub weight: f64,
}

/// Bijection between opaque external identifiers and contiguous indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&idx) = self.lookup.get(id) {
            return idx;
        }
        let idx = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub(crate) fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Integrity(format!("duplicate identifier {id:?}")));
            }
        }
        Ok(Self { ids, lookup })
    }
}

/// Interactions grouped by user, each user's events in ascending time order.
///
/// Interactions are stored contiguously per user (users in index order);
/// within a user, timestamp ties keep their original input order.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    offsets: Vec<usize>,
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
}

impl InteractionLog {
    /// Builds a log from interactions in raw input order.
    pub fn from_raw(
        users: Arc<IdIndex>,
        items: Arc<IdIndex>,
        mut interactions: Vec<Interaction>,
    ) -> Result<Self> {
        for it in &interactions {
            if it.timestamp < 0 {
                return Err(Error::Integrity(format!(
                    "negative timestamp {} for user {}",
                    it.timestamp, it.user
                )));
            }
            if !(it.weight >= 0.0 && it.weight.is_finite()) {
                return Err(Error::Integrity(format!(
                    "invalid weight {} for user {}",
                    it.weight, it.user
                )));
            }
            if it.user as usize >= users.len() || it.item as usize >= items.len() {
                return Err(Error::Integrity(format!(
                    "interaction ({}, {}) outside index bounds",
                    it.user, it.item
                )));
            }
        }
        // stable: ties keep input order
        interactions.sort_by_key(|it| (it.user, it.timestamp));
        let offsets = offsets_for(&interactions, users.len());
        Ok(Self {
            interactions,
            offsets,
            users,
            items,
        })
    }

    /// Same indices, different interactions (already grouped and ordered).
    fn with_interactions(&self, interactions: Vec<Interaction>) -> Self {
        let offsets = offsets_for(&interactions, self.users.len());
        Self {
            interactions,
            offsets,
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &Arc<IdIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdIndex> {
        &self.items
    }

    /// The user's interactions in temporal order.
    pub fn history(&self, user: u32) -> &[Interaction] {
        let u = user as usize;
        &self.interactions[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn history_len(&self, user: u32) -> usize {
        let u = user as usize;
        self.offsets[u + 1] - self.offsets[u]
    }

    /// Users with at least one interaction.
    pub fn active_users(&self) -> usize {
        self.offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// Items with at least one interaction.
    pub fn active_items(&self) -> usize {
        let mut seen = vec![false; self.n_items()];
        for it in &self.interactions {
            seen[it.item as usize] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }

    /// Number of interactions per item.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_items()];
        for it in &self.interactions {
            counts[it.item as usize] += 1;
        }
        counts
    }

    /// Sorted, deduplicated item set of each user.
    pub fn user_item_sets(&self) -> Vec<Vec<u32>> {
        (0..self.n_users() as u32)
            .map(|u| {
                let mut items: Vec<u32> = self.history(u).iter().map(|it| it.item).collect();
                items.sort_unstable();
                items.dedup();
                items
            })
            .collect()
    }

    /// Keeps only the given users (by index), preserving all indices.
    pub fn retain_users(&self, keep: impl Fn(u32) -> bool) -> Self {
        let interactions = self
            .interactions
            .iter()
            .filter(|it| keep(it.user))
            .copied()
            .collect();
        self.with_interactions(interactions)
    }
}

fn offsets_for(interactions: &[Interaction], n_users: usize) -> Vec<usize> {
    let mut offsets = vec![0usize; n_users + 1];
    for it in interactions {
        offsets[it.user as usize + 1] += 1;
    }
    for u in 0..n_users {
        offsets[u + 1] += offsets[u];
    }
    offsets
}

/// Result of a per-user temporal split. Both logs share the source indices.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionLog,
    pub test: InteractionLog,
    /// Users without any test interaction, excluded from evaluation.
    pub ineligible: Vec<u32>,
    /// Users with fewer than two interactions in total.
    pub too_short: usize,
}

/// Number of leading interactions that go to training.
pub fn train_prefix_len(n: usize, train_fraction: f64) -> usize {
    // the small offset keeps e.g. 0.7 * 10 from rounding up to 8
    let raw = train_fraction * n as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(n)
}

/// Splits every user's history: the first `ceil(train_fraction * n_u)` events
/// train, the rest test.
pub fn temporal_split(log: &InteractionLog, train_fraction: f64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::with_capacity(log.len());
    let mut test = Vec::new();
    let mut ineligible = Vec::new();
    let mut too_short = 0;
    for u in 0..log.n_users() as u32 {
        let hist = log.history(u);
        if hist.is_empty() {
            continue;
        }
        if hist.len() < 2 {
            too_short += 1;
        }
        let cut = train_prefix_len(hist.len(), train_fraction);
        train.extend_from_slice(&hist[..cut]);
        test.extend_from_slice(&hist[cut..]);
        if cut == hist.len() {
            ineligible.push(u);
        }
    }
    Ok(Split {
        train: log.with_interactions(train),
        test: log.with_interactions(test),
        ineligible,
        too_short,
    })
}

/// History-length group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    Short,
    Long,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Short => "short",
            Stratum::Long => "long",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "short" => Some(Stratum::Short),
            "long" => Some(Stratum::Long),
            _ => None,
        }
    }
}

/// Median of the lengths (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Short iff length ≤ median of `lengths`.
pub fn stratify_lengths(lengths: &[usize]) -> (f64, Vec<Stratum>) {
    let as_f: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let med = median(&as_f).unwrap_or(0.0);
    let strata = as_f
        .iter()
        .map(|&l| {
            if l <= med {
                Stratum::Short
            } else {
                Stratum::Long
            }
        })
        .collect();
    (med, strata)
}

/// Stratifies users of a training log by history length, indexed by user.
///
/// The median is taken over users with at least one training interaction;
/// users without any are short.
pub fn stratify_users(train: &InteractionLog) -> Vec<Stratum> {
    let active: Vec<usize> = (0..train.n_users() as u32)
        .map(|u| train.history_len(u))
        .filter(|&l| l > 0)
        .collect();
    let (med, _) = stratify_lengths(&active);
    (0..train.n_users() as u32)
        .map(|u| {
            let l = train.history_len(u);
            if l == 0 || l as f64 <= med {
                Stratum::Short
            } else {
                Stratum::Long
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_log(rows: &[(&str, &str, i64)]) -> InteractionLog {
        let mut users = IdIndex::new();
        let mut items = IdIndex::new();
        let raw: Vec<Interaction> = rows
            .iter()
            .map(|&(u, i, t)| Interaction {
                user: users.intern(u),
                item: items.intern(i),
                timestamp: t,
                weight: 1.0,
            })
            .collect();
        InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw).unwrap()
    }

    fn log_with_lengths(lengths: &[usize]) -> InteractionLog {
        let mut rows = Vec::new();
        let names: Vec<String> = (0..lengths.len()).map(|u| format!("u{u}")).collect();
        for (u, &n) in lengths.iter().enumerate() {
            for t in 0..n {
                rows.push((names[u].as_str(), "i", t as i64));
            }
        }
        toy_log(&rows)
    }

    #[test]
    fn ten_interactions_split_eight_two() {
        let log = log_with_lengths(&[10]);
        let split = temporal_split(&log, 0.8).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.test.len(), 2);
        assert!(split.ineligible.is_empty());
    }

    #[test]
    fn two_interactions_all_train_and_ineligible() {
        let log = log_with_lengths(&[2]);
        let split = temporal_split(&log, 0.8).unwrap();
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.test.len(), 0);
        assert_eq!(split.ineligible, vec![0]);
        assert_eq!(split.too_short, 0);
    }

    #[test]
    fn single_interaction_counted_short() {
        let log = log_with_lengths(&[1, 5]);
        let split = temporal_split(&log, 0.8).unwrap();
        assert_eq!(split.too_short, 1);
        assert_eq!(split.train.history_len(0), 1);
    }

    #[test]
    fn split_fraction_out_of_range() {
        let log = log_with_lengths(&[3]);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(temporal_split(&log, f), Err(Error::Config(_))));
        }
    }

    #[test]
    fn prefix_len_is_robust_to_float_noise() {
        assert_eq!(train_prefix_len(10, 0.7), 7);
        assert_eq!(train_prefix_len(10, 0.8), 8);
        assert_eq!(train_prefix_len(3, 0.5), 2);
        assert_eq!(train_prefix_len(1, 0.8), 1);
    }

    #[test]
    fn stratify_median_rule() {
        let log = log_with_lengths(&[3, 5, 9, 100]);
        let strata = stratify_users(&log);
        assert_eq!(
            strata,
            vec![Stratum::Short, Stratum::Short, Stratum::Long, Stratum::Long]
        );
        assert_eq!(stratify_lengths(&[3, 5, 9, 100]).0, 7.0);
    }

    #[test]
    fn stratify_all_equal_is_short() {
        let log = log_with_lengths(&[4, 4, 4]);
        assert!(stratify_users(&log).iter().all(|&s| s == Stratum::Short));
    }

    #[test]
    fn ordering_is_stable_on_timestamp_ties() {
        let log = toy_log(&[("a", "x", 5), ("a", "y", 1), ("a", "z", 5), ("b", "x", 0)]);
        let items: Vec<&str> = log
            .history(0)
            .iter()
            .map(|it| log.items().id(it.item))
            .collect();
        assert_eq!(items, ["y", "x", "z"]);
    }

    #[test]
    fn rejects_negative_timestamp() {
        let mut users = IdIndex::new();
        let mut items = IdIndex::new();
        let raw = vec![Interaction {
            user: users.intern("a"),
            item: items.intern("x"),
            timestamp: -1,
            weight: 1.0,
        }];
        assert!(InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw).is_err());
    }
}
