//! Item → cluster assignment used as the support of recommendation entropy.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionLog;
use crate::error::{Error, Result};
use crate::textio;

/// Raw item id → label (artist, genre, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemLabels(pub HashMap<String, String>);

/// Genre metadata from a MovieLens movies file.
#[derive(Debug, Clone, Default)]
pub struct GenreTable {
    /// First listed genre of every movie.
    pub first_genre: HashMap<String, String>,
    /// Every genre tag that appears in the file.
    pub vocabulary: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy)]
pub enum ClusterMode<'a> {
    /// First listed genre; one cluster per genre tag in the metadata.
    Genre(&'a GenreTable),
    /// One cluster per distinct artist among the catalog items.
    Artist(&'a ItemLabels),
    /// Seeded k-medoids over item co-occurrence.
    Cooccurrence { k: usize, seed: u64 },
}

/// Largest item count accepted by co-occurrence clustering (dense distances).
pub const MAX_COOCCURRENCE_ITEMS: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    /// Cluster of every indexed item.
    pub cluster_of: Vec<u32>,
    pub labels: Vec<String>,
}

impl Catalog {
    pub fn n_clusters(&self) -> usize {
        self.labels.len()
    }

    pub fn cluster(&self, item: u32) -> Option<u32> {
        self.cluster_of.get(item as usize).copied()
    }

    fn from_labels(
        log: &InteractionLog,
        label_of: impl Fn(&str) -> Option<String>,
        vocabulary: BTreeSet<String>,
    ) -> Result<Self> {
        let mut vocabulary = vocabulary;
        let mut per_item = Vec::with_capacity(log.n_items());
        for id in log.items().ids() {
            let label = label_of(id)
                .ok_or_else(|| Error::Integrity(format!("item {id:?} has no cluster label")))?;
            vocabulary.insert(label.clone());
            per_item.push(label);
        }
        let index: BTreeMap<&String, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, l)| (l, i as u32))
            .collect();
        let cluster_of = per_item.iter().map(|l| index[l]).collect();
        Ok(Self {
            cluster_of,
            labels: vocabulary.into_iter().collect(),
        })
    }
}

pub fn build_catalog(log: &InteractionLog, mode: ClusterMode<'_>) -> Result<Catalog> {
    if log.n_items() == 0 {
        return Err(Error::Integrity(
            "cannot build a catalog without items".into(),
        ));
    }
    match mode {
        ClusterMode::Genre(table) => Catalog::from_labels(
            log,
            |id| table.first_genre.get(id).cloned(),
            table.vocabulary.clone(),
        ),
        ClusterMode::Artist(labels) => {
            Catalog::from_labels(log, |id| labels.0.get(id).cloned(), BTreeSet::new())
        }
        ClusterMode::Cooccurrence { k, seed } => cooccurrence_catalog(log, k, seed),
    }
}

/// Cosine distance between items' user-incidence vectors: `1 - c_ij / sqrt(n_i n_j)`
/// where `c_ij` counts users who interacted with both.
fn cooccurrence_distances(log: &InteractionLog) -> Vec<f32> {
    let n = log.n_items();
    let mut counts = vec![0u32; n * n];
    for items in log.user_item_sets() {
        for (a, &i) in items.iter().enumerate() {
            for &j in &items[a..] {
                counts[i as usize * n + j as usize] += 1;
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| counts[i * n + i] as f64).collect();
    let mut dist = vec![1.0f32; n * n];
    for i in 0..n {
        dist[i * n + i] = 0.0;
        for j in i + 1..n {
            let c = counts[i * n + j] as f64;
            let denom = (diag[i] * diag[j]).sqrt();
            let d = if denom > 0.0 { 1.0 - c / denom } else { 1.0 };
            dist[i * n + j] = d as f32;
            dist[j * n + i] = d as f32;
        }
    }
    dist
}

/// Deterministic k-medoids (alternating assignment / medoid update).
///
/// Medoids are seeded by sampling `k` distinct items; every medoid is pinned
/// to its own cluster so exactly `k` clusters are non-empty. Ties go to the
/// lower index throughout.
fn cooccurrence_catalog(log: &InteractionLog, k: usize, seed: u64) -> Result<Catalog> {
    let n = log.n_items();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "co-occurrence cluster count must lie in [1, {n}], got {k}"
        )));
    }
    if n > MAX_COOCCURRENCE_ITEMS {
        return Err(Error::Config(format!(
            "co-occurrence clustering supports at most {MAX_COOCCURRENCE_ITEMS} items, catalog has {n}"
        )));
    }
    let dist = cooccurrence_distances(log);
    let d = |i: usize, j: usize| dist[i * n + j];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids: Vec<usize> = sample(&mut rng, n, k).into_vec();
    medoids.sort_unstable();

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut medoid_of = vec![usize::MAX; n];
        for (c, &m) in medoids.iter().enumerate() {
            medoid_of[m] = c;
        }
        for i in 0..n {
            assign[i] = if medoid_of[i] != usize::MAX {
                medoid_of[i]
            } else {
                let mut best = 0;
                for c in 1..k {
                    if d(i, medoids[c]) < d(i, medoids[best]) {
                        best = c;
                    }
                }
                best
            };
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assign.iter().enumerate() {
            members[c].push(i);
        }
        let mut changed = false;
        for c in 0..k {
            let cost = |m: usize| members[c].iter().map(|&j| d(m, j) as f64).sum::<f64>();
            let mut best = medoids[c];
            let mut best_cost = cost(best);
            for &cand in &members[c] {
                let cc = cost(cand);
                if cc < best_cost || (cc == best_cost && cand < best) {
                    best = cand;
                    best_cost = cc;
                }
            }
            if best != medoids[c] {
                medoids[c] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let labels = medoids
        .iter()
        .map(|&m| format!("medoid:{}", log.items().id(m as u32)))
        .collect();
    Ok(Catalog {
        cluster_of: assign.into_iter().map(|c| c as u32).collect(),
        labels,
    })
}

/// `catalog.csv`: `# n_clusters=<n>` comment, `item_idx,cluster` header, one
/// row per item. Cluster labels go to `clusters.txt`, one per line.
pub fn write_catalog(catalog: &Catalog, dir: &Path) -> Result<()> {
    let path = dir.join("catalog.csv");
    let mut w = textio::create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "# n_clusters={}", catalog.n_clusters()).map_err(io)?;
    writeln!(w, "item_idx,cluster").map_err(io)?;
    for (i, c) in catalog.cluster_of.iter().enumerate() {
        writeln!(w, "{i},{c}").map_err(io)?;
    }
    textio::finish(&path, w)?;
    let lpath = dir.join("clusters.txt");
    let mut w = textio::create(&lpath)?;
    for l in &catalog.labels {
        writeln!(w, "{}", l.replace(['\n', '\r'], " ")).map_err(|e| Error::io(&lpath, e))?;
    }
    textio::finish(&lpath, w)
}

pub fn read_catalog(dir: &Path) -> Result<Catalog> {
    let path = dir.join("catalog.csv");
    let mut n_clusters = None;
    let mut cluster_of = Vec::new();
    textio::for_each_line(&path, |lineno, line| {
        if let Some(rest) = line.strip_prefix("# n_clusters=") {
            n_clusters = Some(
                rest.parse::<usize>()
                    .map_err(|_| Error::parse(&path, lineno, "bad n_clusters"))?,
            );
            return Ok(());
        }
        if line == "item_idx,cluster" || line.is_empty() {
            return Ok(());
        }
        let (i, c) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&path, lineno, "expected item_idx,cluster"))?;
        let i: usize = i
            .parse()
            .map_err(|_| Error::parse(&path, lineno, "bad item_idx"))?;
        let c: u32 = c
            .parse()
            .map_err(|_| Error::parse(&path, lineno, "bad cluster"))?;
        if i != cluster_of.len() {
            return Err(Error::parse(&path, lineno, "item rows out of order"));
        }
        cluster_of.push(c);
        Ok(())
    })?;
    let n = n_clusters.ok_or_else(|| Error::parse(&path, 1, "missing n_clusters"))?;
    let mut labels = Vec::new();
    textio::for_each_line(&dir.join("clusters.txt"), |_, l| {
        labels.push(l.to_owned());
        Ok(())
    })?;
    if labels.len() != n || cluster_of.iter().any(|&c| c as usize >= n) {
        return Err(Error::Integrity(format!(
            "{}: cluster labels inconsistent with n_clusters={n}",
            path.display()
        )));
    }
    Ok(Catalog { cluster_of, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tests::toy_log;

    #[test]
    fn genre_mode_uses_full_vocabulary() {
        let log = toy_log(&[("u", "1", 0), ("u", "2", 1)]);
        let mut table = GenreTable::default();
        table.first_genre.insert("1".into(), "Comedy".into());
        table.first_genre.insert("2".into(), "Action".into());
        table.vocabulary = ["Action", "Comedy", "Drama", "War"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cat = build_catalog(&log, ClusterMode::Genre(&table)).unwrap();
        assert_eq!(cat.n_clusters(), 4);
        assert_eq!(cat.labels[cat.cluster_of[0] as usize], "Comedy");
        assert_eq!(cat.labels[cat.cluster_of[1] as usize], "Action");
    }

    #[test]
    fn missing_label_is_integrity_error() {
        let log = toy_log(&[("u", "1", 0), ("u", "2", 1)]);
        let mut labels = ItemLabels::default();
        labels.0.insert("1".into(), "a".into());
        assert!(matches!(
            build_catalog(&log, ClusterMode::Artist(&labels)),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn artist_mode_counts_distinct_artists() {
        let log = toy_log(&[("u", "t1", 0), ("u", "t2", 1), ("v", "t3", 2)]);
        let mut labels = ItemLabels::default();
        labels.0.insert("t1".into(), "A".into());
        labels.0.insert("t2".into(), "A".into());
        labels.0.insert("t3".into(), "B".into());
        let cat = build_catalog(&log, ClusterMode::Artist(&labels)).unwrap();
        assert_eq!(cat.n_clusters(), 2);
        assert_eq!(cat.cluster_of[0], cat.cluster_of[1]);
    }

    #[test]
    fn cooccurrence_k_bounds() {
        let log = toy_log(&[("u", "a", 0), ("u", "b", 1)]);
        assert!(build_catalog(&log, ClusterMode::Cooccurrence { k: 3, seed: 1 }).is_err());
        assert!(build_catalog(&log, ClusterMode::Cooccurrence { k: 0, seed: 1 }).is_err());
        let cat = build_catalog(&log, ClusterMode::Cooccurrence { k: 2, seed: 1 }).unwrap();
        assert_eq!(cat.n_clusters(), 2);
    }

    #[test]
    fn catalog_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog {
            cluster_of: vec![1, 0, 1],
            labels: vec!["x".into(), "y".into()],
        };
        write_catalog(&cat, dir.path()).unwrap();
        assert_eq!(read_catalog(dir.path()).unwrap(), cat);
    }
}
