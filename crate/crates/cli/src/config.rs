//! Run configuration: a flat set of `key = value` settings.
//!
//! Sources are layered defaults → config file → command-line flags. The
//! resolved set renders back to the same file format, which is what run
//! manifests contain.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use satscope_core::saturation::QuantileScope;
use satscope_core::synth::AxisRange;
use satscope_core::{Axis, DetectionConfig, Error, ModelKind, Result, TrainConfig, UtilityProxy};

/// Every recognised key, its default, and a one-line description.
/// Order here is the order keys appear in manifests.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dataset", "movielens", "movielens | lastfm | synthetic"),
    ("ratings_path", "", "MovieLens ratings.dat"),
    (
        "movies_path",
        "",
        "MovieLens movies.dat (default: next to ratings.dat)",
    ),
    ("lastfm_path", "", "Last.fm-1K listening-events TSV"),
    (
        "output_dir",
        "out",
        "directory for every file a command writes",
    ),
    (
        "cluster_mode",
        "auto",
        "auto | genre | artist | cooccurrence",
    ),
    ("clusters", "50", "number of co-occurrence clusters"),
    ("model", "bpr-mf", "most-popular | bpr-mf | ncf | lightgcn"),
    ("latent_dim", "32", "embedding size"),
    ("learning_rate", "0.05", "SGD step size"),
    ("l2_reg", "0.0001", "L2 penalty"),
    ("epochs", "20", "training epochs"),
    (
        "negatives_per_positive",
        "4",
        "sampled negatives per positive",
    ),
    ("layers", "2", "LightGCN propagation depth"),
    ("hidden", "64", "NCF hidden width"),
    ("batch_size", "256", "samples per gradient step"),
    ("init_std", "0.1", "std of the embedding initialisation"),
    ("seed", "42", "seed for every random choice"),
    (
        "train_fraction",
        "0.8",
        "leading share of each history used for training",
    ),
    (
        "gap_seconds",
        "1800",
        "inactivity gap that closes a session",
    ),
    ("k", "10", "recommendation list length"),
    (
        "exclude_seen",
        "true",
        "drop already-consumed items from lists",
    ),
    ("axis", "entropy", "exploration axis: entropy | unseen"),
    ("proxy", "hit", "utility proxy: hit | continue"),
    ("quantiles", "10", "number of exploration quantiles"),
    ("quantile_scope", "global", "global | per-user"),
    ("m", "2", "consecutive non-positive deltas for rule A"),
    ("eps", "0.005", "near-zero threshold for rule B"),
    ("variance_window", "3", "window length for rule B"),
    (
        "min_events_per_quantile",
        "5",
        "events needed to populate a quantile",
    ),
    ("synth_population", "reference", "reference | plateau"),
    ("synth_users", "200", "synthetic population size"),
    (
        "synth_axis_min",
        "0",
        "lower end of the synthetic exploration range",
    ),
    (
        "synth_axis_max",
        "1",
        "upper end of the synthetic exploration range",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    MovieLens,
    Lastfm,
    Synthetic,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::MovieLens => "movielens",
            Dataset::Lastfm => "lastfm",
            Dataset::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterChoice {
    Auto,
    Genre,
    Artist,
    Cooccurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Population {
    Reference,
    Plateau,
}

/// Fully resolved, validated settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub ratings_path: Option<PathBuf>,
    pub movies_path: Option<PathBuf>,
    pub lastfm_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cluster_mode: ClusterChoice,
    pub clusters: usize,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub gap_seconds: u64,
    pub k: usize,
    pub exclude_seen: bool,
    pub axis: Axis,
    pub proxy: UtilityProxy,
    pub quantiles: usize,
    pub quantile_scope: QuantileScope,
    pub detection: DetectionConfig,
    pub population: Population,
    pub synth_users: usize,
    pub synth_axis: AxisRange,
    raw: BTreeMap<&'static str, String>,
}

fn key_index(key: &str) -> Option<&'static str> {
    let key = key.replace('-', "_");
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(k, _, _)| *k)
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                n + 1
            ))
        })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn parsed<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides`, in that order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut raw: BTreeMap<&'static str, String> =
            KEYS.iter().map(|(k, d, _)| (*k, (*d).to_owned())).collect();
        let mut layers = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            layers.extend(parse_config_text(&text, path)?);
        }
        layers.extend(overrides.iter().cloned());
        for (k, v) in layers {
            let key = key_index(&k).ok_or_else(|| Error::Config(format!("unknown key {k:?}")))?;
            raw.insert(key, v);
        }
        Self::from_raw(raw)
    }

    fn from_raw(raw: BTreeMap<&'static str, String>) -> Result<Self> {
        let get = |k: &str| raw[k].as_str();
        let path = |k: &str| (!get(k).is_empty()).then(|| PathBuf::from(get(k)));
        let dataset = match get("dataset") {
            "movielens" => Dataset::MovieLens,
            "lastfm" => Dataset::Lastfm,
            "synthetic" => Dataset::Synthetic,
            other => return Err(Error::Config(format!("dataset: unknown {other:?}"))),
        };
        let cluster_mode = match get("cluster_mode") {
            "auto" => ClusterChoice::Auto,
            "genre" => ClusterChoice::Genre,
            "artist" => ClusterChoice::Artist,
            "cooccurrence" => ClusterChoice::Cooccurrence,
            other => return Err(Error::Config(format!("cluster_mode: unknown {other:?}"))),
        };
        let population = match get("synth_population") {
            "reference" => Population::Reference,
            "plateau" => Population::Plateau,
            other => {
                return Err(Error::Config(format!(
                    "synth_population: unknown {other:?}"
                )))
            }
        };
        let train = TrainConfig {
            latent_dim: parsed("latent_dim", get("latent_dim"))?,
            learning_rate: parsed("learning_rate", get("learning_rate"))?,
            l2_reg: parsed("l2_reg", get("l2_reg"))?,
            epochs: parsed("epochs", get("epochs"))?,
            negatives_per_positive: parsed(
                "negatives_per_positive",
                get("negatives_per_positive"),
            )?,
            layers: parsed("layers", get("layers"))?,
            hidden: parsed("hidden", get("hidden"))?,
            batch_size: parsed("batch_size", get("batch_size"))?,
            init_std: parsed("init_std", get("init_std"))?,
            seed: parsed("seed", get("seed"))?,
        };
        train.validate()?;
        let detection = DetectionConfig {
            m: parsed("m", get("m"))?,
            eps: parsed("eps", get("eps"))?,
            variance_window: parsed("variance_window", get("variance_window"))?,
            min_events_per_quantile: parsed(
                "min_events_per_quantile",
                get("min_events_per_quantile"),
            )?,
        };
        detection.validate()?;
        let synth_axis = AxisRange {
            min: parsed("synth_axis_min", get("synth_axis_min"))?,
            max: parsed("synth_axis_max", get("synth_axis_max"))?,
        };
        synth_axis.validate()?;
        let cfg = Self {
            dataset,
            ratings_path: path("ratings_path"),
            movies_path: path("movies_path"),
            lastfm_path: path("lastfm_path"),
            output_dir: PathBuf::from(get("output_dir")),
            cluster_mode,
            clusters: parsed("clusters", get("clusters"))?,
            model: ModelKind::parse(get("model"))?,
            train,
            train_fraction: parsed("train_fraction", get("train_fraction"))?,
            gap_seconds: parsed("gap_seconds", get("gap_seconds"))?,
            k: parsed("k", get("k"))?,
            exclude_seen: parsed("exclude_seen", get("exclude_seen"))?,
            axis: Axis::parse(get("axis"))?,
            proxy: UtilityProxy::parse(get("proxy"))?,
            quantiles: parsed("quantiles", get("quantiles"))?,
            quantile_scope: QuantileScope::parse(get("quantile_scope"))?,
            detection,
            population,
            synth_users: parsed("synth_users", get("synth_users"))?,
            synth_axis,
            raw,
        };
        if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        for (key, v) in [
            ("k", cfg.k),
            ("quantiles", cfg.quantiles),
            ("clusters", cfg.clusters),
            ("synth_users", cfg.synth_users),
            ("gap_seconds", cfg.gap_seconds as usize),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        Ok(cfg)
    }

    /// The value of `key` as resolved.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    /// Resolved settings in config-file syntax, one key per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.raw[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use satscope_core::ingest::{DEFAULT_GAP_SECONDS, DEFAULT_TRAIN_FRACTION};
    use satscope_core::metrics::DEFAULT_K;
    use satscope_core::saturation::DEFAULT_QUANTILES;

    #[test]
    fn defaults_agree_with_library() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.detection, DetectionConfig::default());
        assert_eq!(cfg.k, DEFAULT_K);
        assert_eq!(cfg.quantiles, DEFAULT_QUANTILES);
        assert_eq!(cfg.gap_seconds, DEFAULT_GAP_SECONDS);
        assert_eq!(cfg.train_fraction, DEFAULT_TRAIN_FRACTION);
        assert_eq!(cfg.synth_axis, AxisRange::default());
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "# comment\nepochs = 3\nk=5\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[("k".into(), "7".into())]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.k, 7);
        assert_eq!(cfg.quantiles, 10);
    }

    #[test]
    fn rendered_config_resolves_to_itself() {
        let cfg = RunConfig::resolve(
            None,
            &[
                ("m".into(), "3".into()),
                ("ratings-path".into(), "/x/r.dat".into()),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.conf");
        std::fs::write(&file, cfg.render()).unwrap();
        let again = RunConfig::resolve(Some(&file), &[]).unwrap();
        assert_eq!(again.render(), cfg.render());
        assert_eq!(again.detection.m, 3);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [
            ("model", "svd"),
            ("m", "0"),
            ("eps", "x"),
            ("nonsense", "1"),
            ("train_fraction", "1"),
        ] {
            let err = RunConfig::resolve(None, &[(k.into(), v.into())]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{k}={v}: {err}");
        }
    }
}
