//! Seeded synthetic interaction data for tests, benchmarks and desk-scale runs.
//!
//! Users prefer a few genres, item popularity within a genre is skewed, and
//! timestamps mix short intra-session gaps with long breaks, so every
//! pipeline stage sees realistic structure without the public datasets.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{IdIndex, Interaction, InteractionLog};
use crate::textio;

/// The 18 MovieLens-1M genre tags.
pub const MOVIELENS_GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

#[derive(Debug, Clone)]
pub struct LogFixture {
    pub users: usize,
    pub items: usize,
    /// Mean history length; actual lengths are uniform in `[mean/2, 3·mean/2]`, at least 2.
    pub per_user: usize,
    pub genres: usize,
    pub seed: u64,
}

impl Default for LogFixture {
    fn default() -> Self {
        Self {
            users: 100,
            items: 200,
            per_user: 50,
            genres: 18,
            seed: 7,
        }
    }
}

/// `(user, item, timestamp, rating)` rows in raw order (grouped by user,
/// shuffled within user), with 1-based ids.
fn raw_rows(fx: &LogFixture) -> Vec<(usize, usize, i64, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(fx.seed);
    let genres = fx.genres.clamp(1, MOVIELENS_GENRES.len());
    let by_genre: Vec<Vec<usize>> = (0..genres)
        .map(|g| (0..fx.items).filter(|i| i % genres == g).collect())
        .collect();
    let mut rows = Vec::new();
    for u in 0..fx.users {
        let lo = (fx.per_user / 2).max(2);
        let hi = (fx.per_user * 3 / 2).max(lo);
        let n = rng.random_range(lo..=hi);
        let favourite = [rng.random_range(0..genres), rng.random_range(0..genres)];
        let mut t: i64 = 978_300_000 + 997 * u as i64;
        let mut user_rows = Vec::with_capacity(n);
        for _ in 0..n {
            t += if rng.random_bool(0.8) {
                rng.random_range(30..600)
            } else {
                rng.random_range(3_600..200_000)
            };
            let g = if rng.random_bool(0.7) {
                favourite[rng.random_range(0..2)]
            } else {
                rng.random_range(0..genres)
            };
            let pool = if by_genre[g].is_empty() {
                &by_genre[0]
            } else {
                &by_genre[g]
            };
            let x: f64 = rng.random();
            let item = pool[((x * x) * pool.len() as f64) as usize % pool.len()];
            user_rows.push((u + 1, item + 1, t, rng.random_range(1..=5u8)));
        }
        user_rows.shuffle(&mut rng);
        rows.extend(user_rows);
    }
    rows
}

/// Builds a log from a seeded fixture description.
pub fn synthetic_log(fx: &LogFixture) -> InteractionLog {
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let raw = raw_rows(fx)
        .into_iter()
        .map(|(u, i, t, r)| Interaction {
            user: users.intern(&u.to_string()),
            item: items.intern(&i.to_string()),
            timestamp: t,
            weight: r as f64,
        })
        .collect();
    InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw).expect("fixture rows are valid")
}

/// Writes `ratings.dat` and `movies.dat` in MovieLens-1M format.
pub fn write_movielens_fixture(fx: &LogFixture, dir: &Path) -> Result<()> {
    let path = dir.join("ratings.dat");
    let mut w = textio::create(&path)?;
    for (u, i, t, r) in raw_rows(fx) {
        writeln!(w, "{u}::{i}::{r}::{t}").map_err(|e| Error::io(&path, e))?;
    }
    textio::finish(&path, w)?;

    let genres = fx.genres.clamp(1, MOVIELENS_GENRES.len());
    let path = dir.join("movies.dat");
    let mut w = textio::create(&path)?;
    for i in 0..fx.items {
        let g = MOVIELENS_GENRES[i % genres];
        let second = MOVIELENS_GENRES[(i * 7 + 3) % MOVIELENS_GENRES.len()];
        let tags = if i % 3 == 0 && second != g {
            format!("{g}|{second}")
        } else {
            g.to_owned()
        };
        writeln!(
            w,
            "{}::Movie {}: The Sequel ({})::{tags}",
            i + 1,
            i + 1,
            1950 + i % 50
        )
        .map_err(|e| Error::io(&path, e))?;
    }
    textio::finish(&path, w)
}

/// Small hand-written logs: `(user, item, timestamp)` with weight 1.
pub fn log_from_rows(rows: &[(&str, &str, i64)]) -> InteractionLog {
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let raw = rows
        .iter()
        .map(|&(u, i, t)| Interaction {
            user: users.intern(u),
            item: items.intern(i),
            timestamp: t,
            weight: 1.0,
        })
        .collect();
    InteractionLog::from_raw(Arc::new(users), Arc::new(items), raw).expect("valid rows")
}
