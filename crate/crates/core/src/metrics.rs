//! Exploration level and utility proxies for every recommendation event.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{Catalog, InteractionLog, SessionIndex};
use crate::models::Model;
use crate::textio;

/// Default list length.
pub const DEFAULT_K: usize = 10;

pub const EVENTS_HEADER: &str = "user_idx,t,E_entropy,E_unseen,U_hit,U_continue,quantile";

/// Which exploration measure drives quantile assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    Entropy,
    Unseen,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Entropy => "entropy",
            Axis::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Axis::Entropy),
            "unseen" => Ok(Axis::Unseen),
            other => Err(Error::Config(format!(
                "unknown axis {other:?} (entropy|unseen)"
            ))),
        }
    }
}

/// Which utility proxy is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtilityProxy {
    #[default]
    Hit,
    Continuation,
}

impl UtilityProxy {
    pub fn as_str(self) -> &'static str {
        match self {
            UtilityProxy::Hit => "hit",
            UtilityProxy::Continuation => "continue",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hit" => Ok(UtilityProxy::Hit),
            "continue" | "continuation" => Ok(UtilityProxy::Continuation),
            other => Err(Error::Config(format!(
                "unknown utility {other:?} (hit|continue)"
            ))),
        }
    }
}

/// One evaluation step of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationEvent {
    pub user: u32,
    /// Index into the user's test sequence.
    pub t: usize,
    /// Position of the consumed interaction in the user's full history.
    pub anchor: usize,
    /// Empty when read back from an events table.
    pub top_k: Vec<u32>,
    /// Cluster entropy of the list, in nats.
    pub entropy: f64,
    pub unseen: f64,
    pub hit: bool,
    pub cont: bool,
    /// 1-based exploration quantile, once assigned.
    pub quantile: Option<u32>,
    /// The model did not know the user and ranked by popularity.
    pub cold: bool,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
    /// The consumed interaction was the user's last one overall.
    pub terminal: bool,
}

impl RecommendationEvent {
    pub fn axis_value(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Entropy => self.entropy,
            Axis::Unseen => self.unseen,
        }
    }

    pub fn utility(&self, proxy: UtilityProxy) -> f64 {
        let v = match proxy {
            UtilityProxy::Hit => self.hit,
            UtilityProxy::Continuation => self.cont,
        };
        if v {
            1.0
        } else {
            0.0
        }
    }
}

/// Shannon entropy (nats) of the list's distribution over clusters.
pub fn recommendation_entropy(top_k: &[u32], catalog: &Catalog) -> Result<f64> {
    if top_k.is_empty() {
        return Err(Error::Integrity(
            "entropy of an empty recommendation list".into(),
        ));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &item in top_k {
        let c = catalog
            .cluster(item)
            .ok_or_else(|| Error::Integrity(format!("item {item} has no cluster")))?;
        *counts.entry(c).or_default() += 1;
    }
    let n = top_k.len() as f64;
    let mut h = 0.0;
    for &c in counts.values() {
        let p = c as f64 / n;
        h += p * -p.ln();
    }
    Ok(h)
}

/// Share of the list the user has not interacted with.
pub fn unseen_fraction<F: Fn(u32) -> bool>(top_k: &[u32], seen: F) -> f64 {
    if top_k.is_empty() {
        return 0.0;
    }
    let unseen = top_k.iter().filter(|&&i| !seen(i)).count();
    unseen as f64 / top_k.len() as f64
}

/// Whether the next consumed item is in the list; `None` without a next item.
pub fn next_hit(top_k: &[u32], next_item: Option<u32>) -> Option<bool> {
    next_item.map(|n| top_k.contains(&n))
}

/// Fraction of events with a defined next item that hit.
pub fn hit_rate(hits: impl IntoIterator<Item = Option<bool>>) -> Option<f64> {
    let (mut eligible, mut hit) = (0usize, 0usize);
    for h in hits.into_iter().flatten() {
        eligible += 1;
        hit += h as usize;
    }
    (eligible > 0).then(|| hit as f64 / eligible as f64)
}

/// Continuation indicator for the event's anchor, plus whether the anchor is
/// the user's final interaction.
pub fn session_continuation(
    event: &RecommendationEvent,
    sessions: &SessionIndex,
) -> Result<(bool, bool)> {
    sessions.continues(event.user, event.anchor).ok_or_else(|| {
        Error::Integrity(format!(
            "anchor {} of user {} is not covered by any session",
            event.anchor, event.user
        ))
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EventOptions {
    pub k: usize,
    /// Remove already-seen items from every list.
    pub exclude_seen: bool,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            exclude_seen: true,
        }
    }
}

/// Prequential evaluation: for each test interaction of each user, rank with
/// the frozen model given everything seen so far (train plus earlier test
/// interactions), then score the list.
///
/// `sessions` must index the full (train followed by test) history.
pub fn build_events(
    model: &Model,
    train: &InteractionLog,
    test: &InteractionLog,
    catalog: &Catalog,
    sessions: &SessionIndex,
    opts: EventOptions,
) -> Result<Vec<RecommendationEvent>> {
    if opts.k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let n_items = train.n_items();
    if catalog.cluster_of.len() != n_items || model.n_items() != n_items {
        return Err(Error::Integrity(format!(
            "catalog ({}) / model ({}) / log ({n_items}) item counts differ",
            catalog.cluster_of.len(),
            model.n_items()
        )));
    }
    let per_user: Vec<Vec<RecommendationEvent>> = (0..test.n_users() as u32)
        .into_par_iter()
        .map(|u| {
            let test_hist = test.history(u);
            if test_hist.is_empty() {
                return Ok(Vec::new());
            }
            let mut seen = vec![false; n_items];
            for it in train.history(u) {
                seen[it.item as usize] = true;
            }
            let offset = train.history_len(u);
            let mut events = Vec::with_capacity(test_hist.len());
            for (t, it) in test_hist.iter().enumerate() {
                let ranked = if opts.exclude_seen {
                    model.recommend(u, opts.k, |i| seen[i as usize])
                } else {
                    model.recommend(u, opts.k, |_| false)
                };
                let entropy = if ranked.items.is_empty() {
                    0.0
                } else {
                    recommendation_entropy(&ranked.items, catalog)?
                };
                let mut ev = RecommendationEvent {
                    user: u,
                    t,
                    anchor: offset + t,
                    unseen: unseen_fraction(&ranked.items, |i| seen[i as usize]),
                    entropy,
                    hit: next_hit(&ranked.items, Some(it.item)).unwrap_or(false),
                    cont: false,
                    quantile: None,
                    cold: ranked.cold,
                    truncated: ranked.truncated,
                    terminal: false,
                    top_k: ranked.items,
                };
                (ev.cont, ev.terminal) = session_continuation(&ev, sessions)?;
                events.push(ev);
                seen[it.item as usize] = true;
            }
            Ok(events)
        })
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// Writes the events table (header row, one event per row; an unassigned
/// quantile is an empty field).
pub fn write_events(path: &Path, events: &[RecommendationEvent]) -> Result<()> {
    let mut w = textio::create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{EVENTS_HEADER}").map_err(io)?;
    for e in events {
        let q = e.quantile.map(|q| q.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{q}",
            e.user, e.t, e.entropy, e.unseen, e.hit as u8, e.cont as u8
        )
        .map_err(io)?;
    }
    textio::finish(path, w)
}

pub fn read_events(path: &Path) -> Result<Vec<RecommendationEvent>> {
    let mut events = Vec::new();
    textio::for_each_line(path, |lineno, line| {
        if lineno == 1 {
            if line != EVENTS_HEADER {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected header {EVENTS_HEADER:?}"),
                ));
            }
            return Ok(());
        }
        if line.is_empty() {
            return Ok(());
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 7 fields, found {}", f.len()),
            ));
        }
        let bad = |col: &str| Error::parse(path, lineno, format!("bad {col}"));
        let flag = |s: &str, col: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(col)),
        };
        let entropy: f64 = f[2].parse().map_err(|_| bad("E_entropy"))?;
        let unseen: f64 = f[3].parse().map_err(|_| bad("E_unseen"))?;
        if !(entropy >= 0.0) || !(0.0..=1.0).contains(&unseen) {
            return Err(Error::parse(path, lineno, "exploration value out of range"));
        }
        events.push(RecommendationEvent {
            user: f[0].parse().map_err(|_| bad("user_idx"))?,
            t: f[1].parse().map_err(|_| bad("t"))?,
            anchor: 0,
            top_k: Vec::new(),
            entropy,
            unseen,
            hit: flag(f[4], "U_hit")?,
            cont: flag(f[5], "U_continue")?,
            quantile: if f[6].is_empty() {
                None
            } else {
                Some(f[6].parse().map_err(|_| bad("quantile"))?)
            },
            cold: false,
            truncated: false,
            terminal: false,
        });
        Ok(())
    })?;
    Ok(events)
}
