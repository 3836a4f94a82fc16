//! Pipeline stages. Each reads its inputs from files, writes its outputs into
//! `output_dir`, and records a manifest; nothing is carried between stages in
//! memory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use satscope_core::ingest::{
    build_catalog, parse_lastfm, parse_movielens, parse_movies, read_catalog, read_log_cache,
    sessionize, stratify_users, temporal_split, write_catalog, write_log_cache, ClusterMode,
    SessionIndex, LOG_CACHE_FILE,
};
use satscope_core::metrics::{build_events, hit_rate, read_events, write_events, EventOptions};
use satscope_core::models::{load_checkpoint, save_checkpoint};
use satscope_core::saturation::{
    assign_quantiles, assign_quantiles_per_user, population_summary, profile_all, write_curves,
    write_profiles, PopulationSummary, QuantileScheme, QuantileScope, StratumSummary,
};
use satscope_core::synth::{
    generate_population, plateau_population, read_specs, reference_population, spec_strata,
    validate_detector, write_specs,
};
use satscope_core::textio::sha256_file;
use satscope_core::{Error, InteractionLog, Model, Result, Stratum};

use crate::config::{ClusterChoice, Dataset, Population, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Counts published for the Last.fm-1K release; ingest compares against them.
const LASTFM_REFERENCE_ITEMS: usize = 17_632;
const LASTFM_REFERENCE_INTERACTIONS: usize = 19_150_868;

pub const SYNTH_EVENTS: &str = "synth-events.csv";
pub const SYNTH_SPECS: &str = "synth-specs.csv";

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

pub fn checkpoint_file(cfg: &RunConfig) -> PathBuf {
    out(cfg, &format!("{}.ckpt", cfg.model.as_str()))
}

/// Name used for per-run analysis files: the model, or `synthetic`.
fn run_label(cfg: &RunConfig) -> &'static str {
    match cfg.dataset {
        Dataset::Synthetic => "synthetic",
        _ => cfg.model.as_str(),
    }
}

pub fn events_file(cfg: &RunConfig) -> PathBuf {
    match cfg.dataset {
        Dataset::Synthetic => out(cfg, SYNTH_EVENTS),
        _ => out(cfg, &format!("events-{}.csv", cfg.model.as_str())),
    }
}

pub fn profiles_file(cfg: &RunConfig) -> PathBuf {
    out(cfg, &format!("profiles-{}.csv", run_label(cfg)))
}

pub fn curves_file(cfg: &RunConfig) -> PathBuf {
    out(cfg, &format!("curves-{}.csv", run_label(cfg)))
}

fn summary_file(cfg: &RunConfig) -> PathBuf {
    out(cfg, &format!("summary-{}.txt", run_label(cfg)))
}

/// What a command reports on stdout.
pub type Report = Vec<String>;

/// `manifest-<command>.txt`: the resolved config (loadable as a config file)
/// followed by input/output hashes as comments.
fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let mut text = format!("# satscope run manifest\n# version {VERSION}\n# command {command}\n");
    text.push_str(&cfg.render());
    for (kind, files) in [("input", inputs), ("output", outputs)] {
        for f in files {
            let _ = writeln!(text, "# {kind} {} sha256={}", f.display(), sha256_file(f)?);
        }
    }
    let path = out(cfg, &format!("manifest-{command}.txt"));
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("{key} is required for this dataset")))
}

fn not_synthetic(cfg: &RunConfig, command: &str) -> Result<()> {
    if cfg.dataset == Dataset::Synthetic {
        return Err(Error::Config(format!(
            "`{command}` needs a real dataset; synthetic data comes from `synth`"
        )));
    }
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<Report> {
    not_synthetic(cfg, "ingest")?;
    let mut inputs = Vec::new();
    let mut report = Vec::new();
    let (log, catalog) = match cfg.dataset {
        Dataset::MovieLens => {
            let ratings = require(&cfg.ratings_path, "ratings_path")?;
            let log = parse_movielens(&ratings)?;
            inputs.push(ratings.clone());
            let mode = match cfg.cluster_mode {
                ClusterChoice::Auto | ClusterChoice::Genre => {
                    let movies = cfg
                        .movies_path
                        .clone()
                        .unwrap_or_else(|| ratings.with_file_name("movies.dat"));
                    inputs.push(movies.clone());
                    Some(parse_movies(&movies)?)
                }
                ClusterChoice::Cooccurrence => None,
                ClusterChoice::Artist => {
                    return Err(Error::Config(
                        "artist clusters need the lastfm dataset".into(),
                    ))
                }
            };
            let catalog = match &mode {
                Some(genres) => build_catalog(&log, ClusterMode::Genre(genres))?,
                None => build_catalog(&log, cooccurrence(cfg))?,
            };
            (log, catalog)
        }
        Dataset::Lastfm => {
            let path = require(&cfg.lastfm_path, "lastfm_path")?;
            let parsed = parse_lastfm(&path)?;
            inputs.push(path);
            let catalog = match cfg.cluster_mode {
                ClusterChoice::Auto | ClusterChoice::Artist => {
                    build_catalog(&parsed.log, ClusterMode::Artist(&parsed.artists))?
                }
                ClusterChoice::Cooccurrence => build_catalog(&parsed.log, cooccurrence(cfg))?,
                ClusterChoice::Genre => {
                    return Err(Error::Config(
                        "genre clusters need the movielens dataset".into(),
                    ))
                }
            };
            (parsed.log, catalog)
        }
        Dataset::Synthetic => unreachable!(),
    };
    write_log_cache(&log, &cfg.output_dir)?;
    write_catalog(&catalog, &cfg.output_dir)?;

    let split = temporal_split(&log, cfg.train_fraction)?;
    let sessions = sessionize(&log, cfg.gap_seconds)?;
    let mut stats = String::new();
    let _ = writeln!(stats, "dataset = {}", cfg.dataset.as_str());
    let _ = writeln!(stats, "users = {}", log.active_users());
    let _ = writeln!(stats, "items = {}", log.active_items());
    let _ = writeln!(stats, "interactions = {}", log.len());
    let _ = writeln!(stats, "train_interactions = {}", split.train.len());
    let _ = writeln!(stats, "test_interactions = {}", split.test.len());
    let _ = writeln!(stats, "users_without_test = {}", split.ineligible.len());
    let _ = writeln!(stats, "users_too_short = {}", split.too_short);
    let _ = writeln!(stats, "sessions = {}", sessions.len());
    let _ = writeln!(stats, "clusters = {}", catalog.n_clusters());
    if cfg.dataset == Dataset::Lastfm {
        let matches = log.active_items() == LASTFM_REFERENCE_ITEMS
            && log.len() == LASTFM_REFERENCE_INTERACTIONS;
        let line = format!(
            "reference_comparison = items {} vs {LASTFM_REFERENCE_ITEMS}, interactions {} vs {LASTFM_REFERENCE_INTERACTIONS} ({})",
            log.active_items(),
            log.len(),
            if matches { "match" } else { "mismatch" }
        );
        if !matches {
            eprintln!("warning: Last.fm counts differ from the published reference counts");
        }
        let _ = writeln!(stats, "{line}");
    }
    let stats_path = out(cfg, "stats.txt");
    write_text(&stats_path, &stats)?;
    report.extend(stats.lines().map(str::to_owned));

    let outputs = vec![
        out(cfg, LOG_CACHE_FILE),
        out(cfg, "users.txt"),
        out(cfg, "items.txt"),
        out(cfg, "catalog.csv"),
        out(cfg, "clusters.txt"),
        stats_path,
    ];
    write_manifest(cfg, "ingest", &inputs, &outputs)?;
    Ok(report)
}

fn cooccurrence(cfg: &RunConfig) -> ClusterMode<'static> {
    ClusterMode::Cooccurrence {
        k: cfg.clusters,
        seed: cfg.train.seed,
    }
}

fn load_log(cfg: &RunConfig) -> Result<InteractionLog> {
    read_log_cache(&cfg.output_dir)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Report> {
    not_synthetic(cfg, "train")?;
    let log = load_log(cfg)?;
    let split = temporal_split(&log, cfg.train_fraction)?;
    let model = Model::fit(cfg.model, &split.train, &cfg.train)?;
    let path = checkpoint_file(cfg);
    save_checkpoint(&model, &path)?;
    write_manifest(
        cfg,
        "train",
        &[out(cfg, LOG_CACHE_FILE)],
        std::slice::from_ref(&path),
    )?;
    Ok(vec![format!(
        "trained {} on {} interactions -> {}",
        cfg.model.as_str(),
        split.train.len(),
        path.display()
    )])
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Report> {
    not_synthetic(cfg, "evaluate")?;
    let log = load_log(cfg)?;
    let catalog = read_catalog(&cfg.output_dir)?;
    let ckpt = checkpoint_file(cfg);
    let model = load_checkpoint(&ckpt)?;
    if model.kind() != cfg.model {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} model, expected {}",
            ckpt.display(),
            model.kind().as_str(),
            cfg.model.as_str()
        )));
    }
    let split = temporal_split(&log, cfg.train_fraction)?;
    let sessions = SessionIndex::new(&log, &sessionize(&log, cfg.gap_seconds)?);
    let opts = EventOptions {
        k: cfg.k,
        exclude_seen: cfg.exclude_seen,
    };
    let events = build_events(&model, &split.train, &split.test, &catalog, &sessions, opts)?;
    let path = events_file(cfg);
    write_events(&path, &events)?;
    let inputs = [out(cfg, LOG_CACHE_FILE), out(cfg, "catalog.csv"), ckpt];
    write_manifest(cfg, "evaluate", &inputs, std::slice::from_ref(&path))?;
    let rate = hit_rate(events.iter().map(|e| Some(e.hit))).unwrap_or(0.0);
    let cold = events.iter().filter(|e| e.cold).count();
    Ok(vec![format!(
        "{} events (hit rate {rate:.4}, cold {cold}) -> {}",
        events.len(),
        path.display()
    )])
}

fn render_stratum(out: &mut String, name: &str, s: &StratumSummary) {
    let median = s
        .median_index
        .map(|m| m.to_string())
        .unwrap_or_else(|| "none".into());
    let _ = writeln!(
        out,
        "{name}: saturated={} never={} insufficient={} median_index={median}",
        s.saturated, s.never, s.insufficient
    );
    let hist: Vec<String> = s
        .histogram
        .iter()
        .map(|(k, n)| format!("Q{k}:{n}"))
        .collect();
    let _ = writeln!(out, "{name} histogram: {}", hist.join(" "));
}

fn render_summary(
    cfg: &RunConfig,
    scheme: Option<&QuantileScheme>,
    summary: &PopulationSummary,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run = {}", run_label(cfg));
    let _ = writeln!(s, "dataset = {}", cfg.dataset.as_str());
    let _ = writeln!(s, "axis = {}", cfg.axis.as_str());
    let _ = writeln!(s, "proxy = {}", cfg.proxy.as_str());
    let _ = writeln!(s, "quantile_scope = {}", cfg.quantile_scope.as_str());
    let _ = writeln!(s, "quantiles_requested = {}", cfg.quantiles);
    if let Some(scheme) = scheme {
        let _ = writeln!(s, "quantiles_used = {}", scheme.n_quantiles());
        let b: Vec<String> = scheme.boundaries.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "boundaries = {}", b.join(" "));
        if scheme.degenerate() {
            let _ = writeln!(
                s,
                "degenerate = true (all exploration values equal; saturation undefined)"
            );
        } else if scheme.reduced() {
            let _ = writeln!(s, "reduced = true (fewer distinct values than quantiles)");
        }
    }
    render_stratum(&mut s, "all", &summary.all);
    render_stratum(&mut s, "short", &summary.short);
    render_stratum(&mut s, "long", &summary.long);
    s
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<Report> {
    let events_path = events_file(cfg);
    let mut events = read_events(&events_path)?;
    if events.is_empty() {
        return Err(Error::EmptyInput(events_path));
    }
    let mut inputs = vec![events_path];
    let strata: Vec<Stratum> = match cfg.dataset {
        Dataset::Synthetic => {
            let specs_path = out(cfg, SYNTH_SPECS);
            let specs = read_specs(&specs_path)?;
            inputs.push(specs_path);
            spec_strata(&specs)
        }
        _ => {
            inputs.push(out(cfg, LOG_CACHE_FILE));
            let log = load_log(cfg)?;
            stratify_users(&temporal_split(&log, cfg.train_fraction)?.train)
        }
    };
    let (scheme, n_quantiles) = match cfg.quantile_scope {
        QuantileScope::Global => {
            let s = assign_quantiles(&mut events, cfg.quantiles, cfg.axis)?;
            let n = s.n_quantiles();
            (Some(s), n)
        }
        QuantileScope::PerUser => {
            assign_quantiles_per_user(&mut events, cfg.quantiles, cfg.axis)?;
            (None, cfg.quantiles)
        }
    };
    let profiles = profile_all(&events, n_quantiles, cfg.axis, cfg.proxy, &cfg.detection)?;
    let summary = population_summary(&profiles, &strata, n_quantiles)?;
    let (pp, cp, sp) = (profiles_file(cfg), curves_file(cfg), summary_file(cfg));
    write_profiles(&pp, &profiles, &strata)?;
    write_curves(
        &cp,
        &[(run_label(cfg), cfg.dataset.as_str(), &summary.all.curve)],
    )?;
    let text = render_summary(cfg, scheme.as_ref(), &summary);
    write_text(&sp, &text)?;
    write_manifest(cfg, "analyze", &inputs, &[pp, cp, sp])?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Report> {
    let specs = match cfg.population {
        Population::Reference => reference_population(cfg.synth_users, cfg.train.seed),
        Population::Plateau => plateau_population(cfg.synth_users),
    };
    let events = generate_population(&specs, cfg.synth_axis, cfg.train.seed)?;
    let values: Vec<f64> = events.iter().map(|e| e.entropy).collect();
    let scheme = QuantileScheme::from_values(&values, cfg.quantiles)?;
    let (ep, sp) = (out(cfg, SYNTH_EVENTS), out(cfg, SYNTH_SPECS));
    write_events(&ep, &events)?;
    write_specs(&sp, &specs, &scheme)?;
    write_manifest(cfg, "synth", &[], &[ep.clone(), sp.clone()])?;
    Ok(vec![format!(
        "{} users, {} events -> {}, {}",
        specs.len(),
        events.len(),
        ep.display(),
        sp.display()
    )])
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<Report> {
    let (ep, sp) = (out(cfg, SYNTH_EVENTS), out(cfg, SYNTH_SPECS));
    let events = read_events(&ep)?;
    let specs = read_specs(&sp)?;
    let report = validate_detector(&specs, &events, cfg.quantiles, &cfg.detection)?;
    let recovered = report.users.iter().filter(|u| u.recovered()).count();
    let mut text = String::new();
    let _ = writeln!(
        text,
        "recovery_rate = {:.4} ({recovered}/{})",
        report.recovery_rate(),
        report.users.len()
    );
    let _ = writeln!(text, "knees_outside_axis_range = {}", report.out_of_range());
    let rules: Vec<String> = report
        .rule_counts()
        .iter()
        .map(|(r, n)| format!("{r}:{n}"))
        .collect();
    let _ = writeln!(text, "rules = {}", rules.join(" "));
    let _ = writeln!(text, "quantiles_used = {}", report.scheme.n_quantiles());
    render_stratum(&mut text, "all", &report.summary.all);
    render_stratum(&mut text, "short", &report.summary.short);
    render_stratum(&mut text, "long", &report.summary.long);

    let strata = spec_strata(&specs);
    // Separate names so a later `analyze` of the same population (possibly with
    // other quantile settings) does not overwrite the validation run.
    let pp = out(cfg, "profiles-validate.csv");
    let cp = out(cfg, "curves-validate.csv");
    let vp = out(cfg, "validation.txt");
    write_profiles(&pp, &report.profiles, &strata)?;
    write_curves(&cp, &[("validate", "synthetic", &report.summary.all.curve)])?;
    write_text(&vp, &text)?;
    write_manifest(cfg, "validate", &[ep, sp], &[pp, cp, vp])?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Merges every `curves-*.csv` into `curves.csv` and every summary into
/// `report.txt`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Report> {
    let dir = &cfg.output_dir;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut groups: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for n in &names {
        let kind = if n.starts_with("curves-") && n.ends_with(".csv") {
            "curves"
        } else if (n.starts_with("summary-") && n.ends_with(".txt")) || n == "validation.txt" {
            "summary"
        } else {
            continue;
        };
        groups.entry(kind).or_default().push(n);
    }
    let curves = groups.remove("curves").unwrap_or_default();
    let summaries = groups.remove("summary").unwrap_or_default();
    if curves.is_empty() && summaries.is_empty() {
        return Err(Error::EmptyInput(dir.clone()));
    }
    let mut merged = String::new();
    let mut inputs = Vec::new();
    for name in &curves {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if merged.is_empty() {
                    merged.push_str(line);
                    merged.push('\n');
                }
                continue;
            }
            merged.push_str(line);
            merged.push('\n');
        }
        inputs.push(path);
    }
    let mut report = String::new();
    for name in &summaries {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(report, "== {name}\n{text}");
        inputs.push(path);
    }
    let mut outputs = Vec::new();
    if !merged.is_empty() {
        let p = dir.join("curves.csv");
        write_text(&p, &merged)?;
        outputs.push(p);
    }
    let p = dir.join("report.txt");
    write_text(&p, &report)?;
    outputs.push(p);
    write_manifest(cfg, "report", &inputs, &outputs)?;
    Ok(vec![format!(
        "merged {} curve files and {} summaries",
        curves.len(),
        summaries.len()
    )])
}
