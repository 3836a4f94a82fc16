//! Raw dataset readers and the canonical log cache.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::DateTime;

use super::{IdIndex, Interaction, InteractionLog, ItemLabels};
use crate::error::{Error, Result};
use crate::textio;

pub const LOG_CACHE_FILE: &str = "log.csv";
pub const LOG_HEADER: &str = "user_idx,item_idx,timestamp,weight";
const USERS_FILE: &str = "users.txt";
const ITEMS_FILE: &str = "items.txt";

/// Reads a MovieLens-1M `ratings.dat` (`UserID::MovieID::Rating::Timestamp`).
pub fn parse_movielens(path: &Path) -> Result<InteractionLog> {
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut raw = Vec::new();
    textio::for_each_line(path, |lineno, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        let mut fields = line.split("::");
        let (Some(u), Some(i), Some(r), Some(t), None) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) else {
            return Err(Error::parse(
                path,
                lineno,
                "expected UserID::MovieID::Rating::Timestamp",
            ));
        };
        let weight: f64 = r
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad rating {r:?}")))?;
        let timestamp: i64 = t
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad timestamp {t:?}")))?;
        if timestamp < 0 || !(weight >= 0.0) {
            return Err(Error::parse(path, lineno, "negative timestamp or rating"));
        }
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(Error::parse(path, lineno, "empty user or movie id"));
        }
        raw.push(Interaction {
            user: users.intern(u),
            item: items.intern(i),
            timestamp,
            weight,
        });
        Ok(())
    })?;
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw)
}

/// Reads a MovieLens `movies.dat` (`MovieID::Title::Genre|Genre|...`).
pub fn parse_movies(path: &Path) -> Result<super::GenreTable> {
    let mut first_genre = HashMap::new();
    let mut vocabulary = std::collections::BTreeSet::new();
    textio::for_each_line(path, |lineno, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        // titles may contain "::"-free but colon-rich text; split from both ends
        let Some((id, rest)) = line.split_once("::") else {
            return Err(Error::parse(
                path,
                lineno,
                "expected MovieID::Title::Genres",
            ));
        };
        let Some((_, genres)) = rest.rsplit_once("::") else {
            return Err(Error::parse(
                path,
                lineno,
                "expected MovieID::Title::Genres",
            ));
        };
        let tags: Vec<&str> = genres
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .collect();
        let Some(first) = tags.first() else {
            return Err(Error::parse(path, lineno, "movie without genre"));
        };
        first_genre.insert(id.trim().to_owned(), (*first).to_owned());
        vocabulary.extend(tags.iter().map(|g| g.to_string()));
        Ok(())
    })?;
    if first_genre.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(super::GenreTable {
        first_genre,
        vocabulary,
    })
}

/// A parsed Last.fm listening history together with each item's artist.
#[derive(Debug, Clone)]
pub struct LastfmLog {
    pub log: InteractionLog,
    pub artists: ItemLabels,
}

/// Separates artist and track name in fallback item keys.
const KEY_SEP: char = '\u{1f}';

/// Reads the Last.fm-1K `userid-timestamp-artid-artname-traid-traname.tsv`.
///
/// Items are keyed by track MBID; rows without one fall back to
/// artist name + track name. Every play is kept.
pub fn parse_lastfm(path: &Path) -> Result<LastfmLog> {
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut artists: HashMap<String, String> = HashMap::new();
    let mut raw = Vec::new();
    textio::for_each_line(path, |lineno, line| {
        if line.is_empty() {
            return Ok(());
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 tab-separated fields, found {}", f.len()),
            ));
        }
        let (user, ts, art_id, art_name, tra_id, tra_name) = (
            f[0].trim(),
            f[1].trim(),
            f[2].trim(),
            f[3],
            f[4].trim(),
            f[5],
        );
        if user.is_empty() {
            return Err(Error::parse(path, lineno, "empty user id"));
        }
        let timestamp = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| Error::parse(path, lineno, format!("bad timestamp {ts:?}: {e}")))?
            .timestamp();
        if timestamp < 0 {
            return Err(Error::parse(path, lineno, "timestamp before epoch"));
        }
        let key = if !tra_id.is_empty() {
            tra_id.to_owned()
        } else if !art_name.is_empty() || !tra_name.is_empty() {
            format!("{art_name}{KEY_SEP}{tra_name}")
        } else {
            return Err(Error::parse(
                path,
                lineno,
                "row has neither track id nor names",
            ));
        };
        let artist = if !art_id.is_empty() { art_id } else { art_name };
        let item = items.intern(&key);
        artists.entry(key).or_insert_with(|| artist.to_owned());
        raw.push(Interaction {
            user: users.intern(user),
            item,
            timestamp,
            weight: 1.0,
        });
        Ok(())
    })?;
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let log = InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw)?;
    Ok(LastfmLog {
        log,
        artists: ItemLabels(artists),
    })
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = textio::create(path)?;
    for id in ids {
        if id.contains('\n') || id.contains('\r') {
            return Err(Error::Integrity(format!(
                "identifier {id:?} contains a newline"
            )));
        }
        writeln!(w, "{id}").map_err(|e| Error::io(path, e))?;
    }
    textio::finish(path, w)
}

fn read_ids(path: &Path) -> Result<IdIndex> {
    let mut ids = Vec::new();
    textio::for_each_line(path, |_, line| {
        ids.push(line.to_owned());
        Ok(())
    })?;
    IdIndex::from_ids(ids)
}

/// Writes `log.csv` (one `user_idx,item_idx,timestamp,weight` row per
/// interaction under a header row) plus `users.txt` / `items.txt`, which list
/// raw identifiers one per line in index order.
pub fn write_log_cache(log: &InteractionLog, dir: &Path) -> Result<()> {
    write_ids(&dir.join(USERS_FILE), log.users().ids())?;
    write_ids(&dir.join(ITEMS_FILE), log.items().ids())?;
    let path = dir.join(LOG_CACHE_FILE);
    let mut w = textio::create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "{LOG_HEADER}").map_err(io)?;
    for it in log.interactions() {
        writeln!(w, "{},{},{},{}", it.user, it.item, it.timestamp, it.weight).map_err(io)?;
    }
    textio::finish(&path, w)
}

/// Reads a cache written by [`write_log_cache`].
pub fn read_log_cache(dir: &Path) -> Result<InteractionLog> {
    let users = read_ids(&dir.join(USERS_FILE))?;
    let items = read_ids(&dir.join(ITEMS_FILE))?;
    let path = dir.join(LOG_CACHE_FILE);
    let mut raw = Vec::new();
    textio::for_each_line(&path, |lineno, line| {
        if lineno == 1 {
            if line != LOG_HEADER {
                return Err(Error::parse(
                    &path,
                    1,
                    format!("expected header {LOG_HEADER:?}"),
                ));
            }
            return Ok(());
        }
        let mut f = line.split(',');
        let mut next = |what: &str| {
            f.next()
                .ok_or_else(|| Error::parse(&path, lineno, format!("missing {what}")))
        };
        let bad = |what: &str| Error::parse(&path, lineno, format!("bad {what}"));
        let user = next("user_idx")?.parse().map_err(|_| bad("user_idx"))?;
        let item = next("item_idx")?.parse().map_err(|_| bad("item_idx"))?;
        let timestamp = next("timestamp")?.parse().map_err(|_| bad("timestamp"))?;
        let weight = next("weight")?.parse().map_err(|_| bad("weight"))?;
        raw.push(Interaction {
            user,
            item,
            timestamp,
            weight,
        });
        Ok(())
    })?;
    if raw.is_empty() {
        return Err(Error::EmptyInput(path));
    }
    InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn movielens_keeps_repeated_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "ratings.dat",
            "1::10::5::100\n1::10::3::50\n2::11::4::10\n",
        );
        let log = parse_movielens(&p).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.n_users(), 2);
        assert_eq!(log.n_items(), 2);
        let ts: Vec<i64> = log.history(0).iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, [50, 100]);
    }

    #[test]
    fn movielens_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "ratings.dat", "");
        assert!(matches!(parse_movielens(&p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn movielens_malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "ratings.dat", "1::10::5::100\n1::10::x\n");
        match parse_movielens(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn movielens_gzip_input() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ratings.dat.gz");
        let mut enc = GzEncoder::new(std::fs::File::create(&p).unwrap(), Default::default());
        enc.write_all(b"1::10::5::100\n2::10::3::50\n").unwrap();
        enc.finish().unwrap();
        assert_eq!(parse_movielens(&p).unwrap().len(), 2);
    }

    #[test]
    fn movies_first_genre() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "movies.dat",
            "1::Toy Story (1995)::Animation|Children's|Comedy\n2::Heat: Part 1 (1995)::Action\n",
        );
        let g = parse_movies(&p).unwrap();
        assert_eq!(g.first_genre["1"], "Animation");
        assert_eq!(g.first_genre["2"], "Action");
        assert_eq!(g.vocabulary.len(), 4);
    }

    const LFM: &str = "\
user_000001\t2009-05-04T23:08:57Z\tart1\tDeep Dish\ttr1\tFuck Me Im Famous
user_000001\t2009-05-04T13:54:10Z\tart2\tUmmet Ozcan\t\tSummer Sun
user_000002\t2009-05-03T15:48:25Z\tart1\tDeep Dish\ttr1\tFuck Me Im Famous
user_000001\t2009-05-04T13:52:04Z\t\tSome Artist\ttr3\tTrack
user_000002\t2009-05-03T15:37:56Z\tart2\tUmmet Ozcan\t\tSummer Sun
";

    #[test]
    fn lastfm_sorted_with_fallback_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "lfm.tsv", LFM);
        let parsed = parse_lastfm(&p).unwrap();
        let log = &parsed.log;
        assert_eq!(log.n_users(), 2);
        assert_eq!(log.len(), 5);
        assert_eq!(log.n_items(), 3);
        for u in 0..2 {
            let h = log.history(u);
            assert!(h.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
        let fallback = format!("Ummet Ozcan{KEY_SEP}Summer Sun");
        assert!(log.items().get(&fallback).is_some());
        assert_eq!(parsed.artists.0[&fallback], "art2");
        assert_eq!(parsed.artists.0["tr3"], "Some Artist");
    }

    #[test]
    fn lastfm_bad_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "lfm.tsv", "u1\tyesterday\ta\tA\tt\tT\n");
        assert!(matches!(
            parse_lastfm(&p),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "ratings.dat",
            "7::10::5::100\n7::11::3.5::50\n3::10::4::10\n3::12::1::10\n",
        );
        let log = parse_movielens(&p).unwrap();
        write_log_cache(&log, dir.path()).unwrap();
        let back = read_log_cache(dir.path()).unwrap();
        assert_eq!(back, log);
    }
}
