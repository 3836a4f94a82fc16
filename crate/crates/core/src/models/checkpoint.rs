//! Plain-text model checkpoints.
//!
//! ```text
//! satscope-checkpoint v1
//! model=bpr-mf
//! n_users=..
//! n_items=..
//! dim=..
//! seed=..
//! config_hash=<sha256 of the canonical training config>
//! config=<canonical training config>
//! table <name> <rows> <cols>
//! <rows lines of space-separated values>
//! ...
//! sha256=<digest of every preceding line>
//! ```
//!
//! Floats are written in shortest round-trip form, so a reloaded model
//! scores bit-identically.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{EmbeddingTable, Model, ModelKind, NcfNet, Params, TrainConfig};
use crate::error::{Error, Result};
use crate::textio::{self, sha256_str};

pub const CHECKPOINT_VERSION: &str = "satscope-checkpoint v1";

fn push_table(out: &mut String, name: &str, rows: usize, cols: usize, values: &[f64]) {
    let _ = writeln!(out, "table {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn render(model: &Model) -> String {
    let cfg = model.config.canonical();
    let dim = model.factors().map_or(0, |(u, _)| u.dim());
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_VERSION}");
    let _ = writeln!(out, "model={}", model.kind);
    let _ = writeln!(out, "n_users={}", model.n_users);
    let _ = writeln!(out, "n_items={}", model.n_items);
    let _ = writeln!(out, "dim={dim}");
    let _ = writeln!(out, "seed={}", model.config.seed);
    let _ = writeln!(out, "config_hash={}", sha256_str(&cfg));
    let _ = writeln!(out, "config={cfg}");
    let pop: Vec<f64> = model.popularity.iter().map(|&c| c as f64).collect();
    push_table(&mut out, "popularity", 1, pop.len(), &pop);
    let mut table =
        |name: &str, t: &EmbeddingTable| push_table(&mut out, name, t.rows(), t.dim(), t.values());
    match &model.params {
        Params::Popular => {}
        Params::Factors { users, items } => {
            table("users", users);
            table("items", items);
        }
        Params::Ncf {
            users, items, net, ..
        } => {
            table("users", users);
            table("items", items);
            let h = net.hidden();
            push_table(&mut out, "w1", h, 2 * net.dim(), &net.w1);
            push_table(&mut out, "b1", 1, h, &net.b1);
            push_table(&mut out, "w2", 1, h, &net.w2);
            push_table(&mut out, "b2", 1, 1, &[net.b2]);
        }
        Params::LightGcn {
            ego_users,
            ego_items,
            users,
            items,
            ..
        } => {
            table("ego_users", ego_users);
            table("ego_items", ego_items);
            table("users", users);
            table("items", items);
        }
    }
    let digest = sha256_str(&out);
    let _ = writeln!(out, "sha256={digest}");
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let text = render(model);
    let mut w = textio::create(path)?;
    w.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    textio::finish(path, w)
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!(
        "corrupted or unsupported checkpoint (expected {CHECKPOINT_VERSION}): {msg}"
    ))
}

fn parse_config(s: &str) -> Result<TrainConfig> {
    let kv: HashMap<&str, &str> = s.split(';').filter_map(|p| p.split_once('=')).collect();
    fn get<T: std::str::FromStr>(kv: &HashMap<&str, &str>, k: &str) -> Result<T> {
        kv.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(format!("config key {k}")))
    }
    Ok(TrainConfig {
        latent_dim: get(&kv, "latent_dim")?,
        learning_rate: get(&kv, "learning_rate")?,
        l2_reg: get(&kv, "l2_reg")?,
        epochs: get(&kv, "epochs")?,
        negatives_per_positive: get(&kv, "negatives_per_positive")?,
        layers: get(&kv, "layers")?,
        hidden: get(&kv, "hidden")?,
        batch_size: get(&kv, "batch_size")?,
        init_std: get(&kv, "init_std")?,
        seed: get(&kv, "seed")?,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => corrupt("not valid UTF-8"),
        _ => Error::io(path, e),
    });
    text.and_then(|t| parse(&t)).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_VERSION) {
        return Err(corrupt("bad version header"));
    }
    let body_end = text
        .rfind("sha256=")
        .ok_or_else(|| corrupt("missing checksum"))?;
    let digest = text[body_end + "sha256=".len()..].trim_end();
    if sha256_str(&text[..body_end]) != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut header = HashMap::new();
    let mut tables: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::new();
    let mut lines = text[..body_end].lines().skip(1).peekable();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix("table ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            let [name, rows, cols] = parts[..] else {
                return Err(corrupt(format!("bad table header {line:?}")));
            };
            let rows: usize = rows.parse().map_err(|_| corrupt("bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| corrupt("bad column count"))?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = lines
                    .next()
                    .ok_or_else(|| corrupt(format!("table {name} truncated")))?;
                for v in row.split(' ').filter(|s| !s.is_empty()) {
                    values.push(
                        v.parse::<f64>()
                            .map_err(|_| corrupt(format!("bad value {v:?}")))?,
                    );
                }
            }
            if values.len() != rows * cols {
                return Err(corrupt(format!("table {name} has wrong size")));
            }
            tables.insert(name.to_owned(), (rows, cols, values));
        } else if let Some((k, v)) = line.split_once('=') {
            header.insert(k.to_owned(), v.to_owned());
        } else {
            return Err(corrupt(format!("unexpected line {line:?}")));
        }
    }
    let field = |k: &str| header.get(k).ok_or_else(|| corrupt(format!("missing {k}")));
    let kind = ModelKind::parse(field("model")?).map_err(|_| corrupt("unknown model"))?;
    let n_users: usize = field("n_users")?.parse().map_err(|_| corrupt("n_users"))?;
    let n_items: usize = field("n_items")?.parse().map_err(|_| corrupt("n_items"))?;
    let config = parse_config(field("config")?)?;
    if &sha256_str(&config.canonical()) != field("config_hash")? {
        return Err(corrupt("config hash mismatch"));
    }
    let mut take = |name: &str, rows: usize| -> Result<EmbeddingTable> {
        let (r, c, v) = tables
            .remove(name)
            .ok_or_else(|| corrupt(format!("missing table {name}")))?;
        if r != rows {
            return Err(corrupt(format!(
                "table {name} has {r} rows, expected {rows}"
            )));
        }
        EmbeddingTable::from_values(r, c, v).map_err(corrupt)
    };
    let popularity: Vec<u32> = take("popularity", 1)?
        .values()
        .iter()
        .map(|&v| v as u32)
        .collect();
    if popularity.len() != n_items {
        return Err(corrupt("popularity length"));
    }
    let params = match kind {
        ModelKind::MostPopular => Params::Popular,
        ModelKind::BprMf => Params::Factors {
            users: take("users", n_users)?,
            items: take("items", n_items)?,
        },
        ModelKind::Ncf => {
            let users = take("users", n_users)?;
            let items = take("items", n_items)?;
            let w1 = take("w1", config.hidden)?;
            let b1 = take("b1", 1)?;
            let w2 = take("w2", 1)?;
            let b2 = take("b2", 1)?;
            let net = NcfNet::from_parts(
                users.dim(),
                config.hidden,
                w1.values().to_vec(),
                b1.values().to_vec(),
                w2.values().to_vec(),
                b2.values()[0],
            )
            .map_err(corrupt)?;
            let item_proj = net.project_items(&items);
            Params::Ncf {
                users,
                items,
                net,
                item_proj,
            }
        }
        ModelKind::LightGcn => Params::LightGcn {
            ego_users: take("ego_users", n_users)?,
            ego_items: take("ego_items", n_items)?,
            users: take("users", n_users)?,
            items: take("items", n_items)?,
            layers: config.layers,
        },
    };
    Ok(Model {
        kind,
        n_users,
        n_items,
        popularity,
        config,
        params,
    })
}
