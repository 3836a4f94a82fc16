//! The four recommenders behind one fit / score / recommend interface.

mod checkpoint;
pub mod gradcheck;
mod ncf;
mod pairwise;

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::InteractionLog;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use ncf::{NcfGrad, NcfNet};
pub use pairwise::{
    bpr_triple_grad, bpr_triple_loss, pairwise_grad, pairwise_loss, Graph, PairwiseGrad,
    Propagation,
};

/// Hyperparameters shared by the learned models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    /// LightGCN propagation depth.
    pub layers: usize,
    /// NCF hidden width.
    pub hidden: usize,
    /// Triples (or NCF samples) per gradient step.
    pub batch_size: usize,
    /// Standard deviation of the Gaussian embedding initialisation.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            learning_rate: 0.05,
            l2_reg: 1e-4,
            epochs: 20,
            negatives_per_positive: 4,
            layers: 2,
            hidden: 64,
            batch_size: 256,
            init_std: 0.1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid training config: {what}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return bad("l2_reg must be finite and non-negative");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    /// Canonical `key=value;...` rendering, hashed into checkpoints.
    pub fn canonical(&self) -> String {
        format!(
            "latent_dim={};learning_rate={};l2_reg={};epochs={};negatives_per_positive={};layers={};hidden={};batch_size={};init_std={};seed={}",
            self.latent_dim,
            self.learning_rate,
            self.l2_reg,
            self.epochs,
            self.negatives_per_positive,
            self.layers,
            self.hidden,
            self.batch_size,
            self.init_std,
            self.seed
        )
    }
}

/// Dense row-major table of latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_values(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Integrity(format!(
                "embedding table {rows}x{dim} given {} values",
                values.len()
            )));
        }
        Ok(Self { rows, dim, values })
    }

    pub(crate) fn gaussian(rows: usize, dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std validated positive");
        let values = (0..rows * dim).map(|_| normal.sample(rng)).collect();
        Self { rows, dim, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    MostPopular,
    BprMf,
    Ncf,
    LightGcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::MostPopular,
        ModelKind::BprMf,
        ModelKind::Ncf,
        ModelKind::LightGcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MostPopular => "most-popular",
            ModelKind::BprMf => "bpr-mf",
            ModelKind::Ncf => "ncf",
            ModelKind::LightGcn => "lightgcn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "most-popular" | "mostpopular" | "pop" => Ok(ModelKind::MostPopular),
            "bpr-mf" | "bprmf" | "bpr" => Ok(ModelKind::BprMf),
            "ncf" => Ok(ModelKind::Ncf),
            "lightgcn" => Ok(ModelKind::LightGcn),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Params {
    Popular,
    Factors {
        users: EmbeddingTable,
        items: EmbeddingTable,
    },
    Ncf {
        users: EmbeddingTable,
        items: EmbeddingTable,
        net: NcfNet,
        // W1 (item half) · q_i per item, derived from the above
        item_proj: Vec<f64>,
    },
    LightGcn {
        ego_users: EmbeddingTable,
        ego_items: EmbeddingTable,
        users: EmbeddingTable,
        items: EmbeddingTable,
        layers: usize,
    },
}

/// A fitted recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    n_users: usize,
    n_items: usize,
    popularity: Vec<u32>,
    config: TrainConfig,
    params: Params,
}

/// A ranked recommendation list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranked {
    pub items: Vec<u32>,
    /// The user was unknown to the model; popularity order was used.
    pub cold: bool,
    /// Fewer than `k` candidates remained after exclusion.
    pub truncated: bool,
}

impl Model {
    pub fn fit(kind: ModelKind, train: &InteractionLog, cfg: &TrainConfig) -> Result<Self> {
        match kind {
            ModelKind::MostPopular => Self::fit_most_popular(train),
            ModelKind::BprMf => Self::fit_bpr_mf(train, cfg),
            ModelKind::Ncf => Self::fit_ncf(train, cfg),
            ModelKind::LightGcn => Self::fit_lightgcn(train, cfg),
        }
    }

    /// Scores every item by its training interaction count.
    pub fn fit_most_popular(train: &InteractionLog) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training log".into()));
        }
        Ok(Self {
            kind: ModelKind::MostPopular,
            n_users: train.n_users(),
            n_items: train.n_items(),
            popularity: train.item_counts(),
            config: TrainConfig::default(),
            params: Params::Popular,
        })
    }

    pub fn fit_bpr_mf(train: &InteractionLog, cfg: &TrainConfig) -> Result<Self> {
        let (users, items) = pairwise::train(train, cfg, None)?;
        Ok(Self::assemble(
            ModelKind::BprMf,
            train,
            cfg,
            Params::Factors { users, items },
        ))
    }

    pub fn fit_lightgcn(train: &InteractionLog, cfg: &TrainConfig) -> Result<Self> {
        let graph = Graph::from_log(train);
        let (ego_users, ego_items) = pairwise::train(train, cfg, Some((&graph, cfg.layers)))?;
        let (users, items) = graph.propagate(&ego_users, &ego_items, cfg.layers);
        Ok(Self::assemble(
            ModelKind::LightGcn,
            train,
            cfg,
            Params::LightGcn {
                ego_users,
                ego_items,
                users,
                items,
                layers: cfg.layers,
            },
        ))
    }

    pub fn fit_ncf(train: &InteractionLog, cfg: &TrainConfig) -> Result<Self> {
        let (users, items, net) = ncf::train(train, cfg)?;
        let item_proj = net.project_items(&items);
        Ok(Self::assemble(
            ModelKind::Ncf,
            train,
            cfg,
            Params::Ncf {
                users,
                items,
                net,
                item_proj,
            },
        ))
    }

    fn assemble(
        kind: ModelKind,
        train: &InteractionLog,
        cfg: &TrainConfig,
        params: Params,
    ) -> Self {
        Self {
            kind,
            n_users: train.n_users(),
            n_items: train.n_items(),
            popularity: train.item_counts(),
            config: cfg.clone(),
            params,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn popularity(&self) -> &[u32] {
        &self.popularity
    }

    /// Learned user and item representations used for scoring, if any.
    pub fn factors(&self) -> Option<(&EmbeddingTable, &EmbeddingTable)> {
        match &self.params {
            Params::Popular => None,
            Params::Factors { users, items }
            | Params::Ncf { users, items, .. }
            | Params::LightGcn { users, items, .. } => Some((users, items)),
        }
    }

    pub fn ncf_net(&self) -> Option<&NcfNet> {
        match &self.params {
            Params::Ncf { net, .. } => Some(net),
            _ => None,
        }
    }

    pub fn is_known_user(&self, user: u32) -> bool {
        (user as usize) < self.n_users
    }

    /// Score of one pair. Unknown users get the popularity score.
    pub fn score(&self, user: u32, item: u32) -> f64 {
        let i = item as usize;
        if !self.is_known_user(user) {
            return self.popularity[i] as f64;
        }
        let u = user as usize;
        match &self.params {
            Params::Popular => self.popularity[i] as f64,
            Params::Factors { users, items } | Params::LightGcn { users, items, .. } => {
                dot(users.row(u), items.row(i))
            }
            Params::Ncf {
                users,
                net,
                item_proj,
                ..
            } => {
                let user_proj = net.project_user(users.row(u));
                net.score_projected(
                    &user_proj,
                    &item_proj[i * net.hidden()..(i + 1) * net.hidden()],
                )
            }
        }
    }

    /// Fills `out` (length `n_items`) with the user's scores.
    pub fn scores_into(&self, user: u32, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_items);
        if !self.is_known_user(user) {
            for (o, &c) in out.iter_mut().zip(&self.popularity) {
                *o = c as f64;
            }
            return;
        }
        let u = user as usize;
        match &self.params {
            Params::Popular => {
                for (o, &c) in out.iter_mut().zip(&self.popularity) {
                    *o = c as f64;
                }
            }
            Params::Factors { users, items } | Params::LightGcn { users, items, .. } => {
                let p = users.row(u);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(p, items.row(i));
                }
            }
            Params::Ncf {
                users,
                net,
                item_proj,
                ..
            } => {
                let user_proj = net.project_user(users.row(u));
                let h = net.hidden();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = net.score_projected(&user_proj, &item_proj[i * h..(i + 1) * h]);
                }
            }
        }
    }

    /// Top-`k` items by descending score, ties by ascending item index,
    /// skipping items for which `exclude` returns true.
    pub fn recommend<F>(&self, user: u32, k: usize, exclude: F) -> Ranked
    where
        F: Fn(u32) -> bool,
    {
        let mut scores = vec![0.0; self.n_items];
        self.scores_into(user, &mut scores);
        let items = top_k(&scores, k, exclude);
        Ranked {
            truncated: items.len() < k,
            items,
            cold: !self.is_known_user(user),
        }
    }
}

fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` best scores (descending, ties by ascending index).
pub fn top_k<F>(scores: &[f64], k: usize, exclude: F) -> Vec<u32>
where
    F: Fn(u32) -> bool,
{
    let mut pool: Vec<(f64, u32)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as u32))
        .filter(|&(_, i)| !exclude(i))
        .collect();
    if k == 0 {
        return Vec::new();
    }
    if k < pool.len() {
        pool.select_nth_unstable_by(k - 1, rank_order);
        pool.truncate(k);
    }
    pool.sort_unstable_by(rank_order);
    pool.into_iter().map(|(_, i)| i).collect()
}

/// Uniform sampling over the items a user has not interacted with in training.
pub(crate) struct NegativeSampler {
    n_items: u32,
    seen: Vec<Vec<u32>>,
}

impl NegativeSampler {
    pub(crate) fn new(train: &InteractionLog) -> Self {
        Self {
            n_items: train.n_items() as u32,
            seen: train.user_item_sets(),
        }
    }

    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng, user: u32) -> Option<u32> {
        let seen = &self.seen[user as usize];
        let n_unseen = self.n_items as usize - seen.len();
        if n_unseen == 0 {
            return None;
        }
        for _ in 0..32 {
            let j = rng.random_range(0..self.n_items);
            if seen.binary_search(&j).is_err() {
                return Some(j);
            }
        }
        // dense users: pick the r-th unseen item directly
        let mut r = rng.random_range(0..n_unseen as u32);
        let mut prev = 0u32;
        for &s in seen.iter().chain(std::iter::once(&self.n_items)) {
            let gap = s - prev;
            if r < gap {
                return Some(prev + r);
            }
            r -= gap;
            prev = s + 1;
        }
        unreachable!("r < number of unseen items")
    }
}

/// `(user, item)` for every training interaction, in log order.
pub(crate) fn positives(train: &InteractionLog) -> Vec<(u32, u32)> {
    train
        .interactions()
        .iter()
        .map(|it| (it.user, it.item))
        .collect()
}
