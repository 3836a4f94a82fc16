//! Compact neural collaborative filtering: one ReLU hidden layer over the
//! concatenated user and item embeddings, trained with logistic loss on
//! positives and sampled negatives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{dot, log_sigmoid, positives, sigmoid, EmbeddingTable, NegativeSampler, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::InteractionLog;

/// `score = w2ᵀ relu(W1 [p; q] + b1) + b2`, with `W1` stored row-major as
/// `hidden × 2·dim` (user half first).
#[derive(Debug, Clone, PartialEq)]
pub struct NcfNet {
    dim: usize,
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient of the per-sample NCF loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NcfGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

impl NcfGrad {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            user: vec![0.0; dim],
            item: vec![0.0; dim],
        }
    }
}

impl NcfNet {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn from_parts(
        dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    ) -> Result<Self> {
        if w1.len() != hidden * 2 * dim || b1.len() != hidden || w2.len() != hidden {
            return Err(Error::Integrity(format!(
                "NCF parameter shapes do not match dim={dim} hidden={hidden}"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        })
    }

    fn init(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let n1 = Normal::new(0.0, (1.0 / (2 * dim) as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive std");
        let w1 = (0..hidden * 2 * dim).map(|_| n1.sample(rng)).collect();
        let w2 = (0..hidden).map(|_| n2.sample(rng)).collect();
        Self {
            dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// User half of the first layer: `W1[:, :d] · p`.
    pub fn project_user(&self, p: &[f64]) -> Vec<f64> {
        let d2 = 2 * self.dim;
        (0..self.hidden)
            .map(|j| dot(&self.w1[j * d2..j * d2 + self.dim], p))
            .collect()
    }

    /// Item half of the first layer: `W1[:, d:] · q`.
    pub fn project_item(&self, q: &[f64]) -> Vec<f64> {
        let d2 = 2 * self.dim;
        (0..self.hidden)
            .map(|j| dot(&self.w1[j * d2 + self.dim..(j + 1) * d2], q))
            .collect()
    }

    pub(crate) fn project_items(&self, items: &EmbeddingTable) -> Vec<f64> {
        (0..items.rows())
            .flat_map(|i| self.project_item(items.row(i)))
            .collect()
    }

    pub fn score_projected(&self, user_proj: &[f64], item_proj: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.hidden {
            let z = user_proj[j] + item_proj[j] + self.b1[j];
            if z > 0.0 {
                acc += self.w2[j] * z;
            }
        }
        acc + self.b2
    }

    pub fn score(&self, p: &[f64], q: &[f64]) -> f64 {
        self.score_projected(&self.project_user(p), &self.project_item(q))
    }

    /// Logistic loss for a labelled pair plus
    /// `l2/2 (‖p‖² + ‖q‖² + ‖W1‖² + ‖w2‖²)`.
    pub fn sample_loss(&self, p: &[f64], q: &[f64], label: bool, l2: f64) -> f64 {
        let s = self.score(p, q);
        let data = if label {
            -log_sigmoid(s)
        } else {
            -log_sigmoid(-s)
        };
        data + 0.5
            * l2
            * (dot(p, p) + dot(q, q) + dot(&self.w1, &self.w1) + dot(&self.w2, &self.w2))
    }

    /// Adds the data-term gradient of one sample into `g`.
    fn accumulate(&self, p: &[f64], q: &[f64], label: bool, g: &mut NcfGrad) {
        let d = self.dim;
        let d2 = 2 * d;
        let up = self.project_user(p);
        let ip = self.project_item(q);
        let mut z = vec![0.0; self.hidden];
        let mut s = 0.0;
        for j in 0..self.hidden {
            z[j] = up[j] + ip[j] + self.b1[j];
            if z[j] > 0.0 {
                s += self.w2[j] * z[j];
            }
        }
        s += self.b2;
        let ds = sigmoid(s) - if label { 1.0 } else { 0.0 };
        g.b2 += ds;
        for j in 0..self.hidden {
            if z[j] <= 0.0 {
                continue;
            }
            g.w2[j] += ds * z[j];
            let dz = ds * self.w2[j];
            g.b1[j] += dz;
            let row = &self.w1[j * d2..(j + 1) * d2];
            let grow = &mut g.w1[j * d2..(j + 1) * d2];
            for k in 0..d {
                grow[k] += dz * p[k];
                grow[d + k] += dz * q[k];
                g.user[k] += dz * row[k];
                g.item[k] += dz * row[d + k];
            }
        }
    }

    /// Gradient of [`NcfNet::sample_loss`].
    pub fn sample_grad(&self, p: &[f64], q: &[f64], label: bool, l2: f64) -> NcfGrad {
        let mut g = NcfGrad::zeros(self.dim, self.hidden);
        self.accumulate(p, q, label, &mut g);
        for (gw, w) in g.w1.iter_mut().zip(&self.w1) {
            *gw += l2 * w;
        }
        for (gw, w) in g.w2.iter_mut().zip(&self.w2) {
            *gw += l2 * w;
        }
        for k in 0..self.dim {
            g.user[k] += l2 * p[k];
            g.item[k] += l2 * q[k];
        }
        g
    }

    fn all_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite())
    }
}

/// Mini-batch SGD over `(u, i, 1)` positives and `(u, j, 0)` sampled negatives.
pub(crate) fn train(
    train: &InteractionLog,
    cfg: &TrainConfig,
) -> Result<(EmbeddingTable, EmbeddingTable, NcfNet)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training log".into()));
    }
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut users = EmbeddingTable::gaussian(train.n_users(), d, cfg.init_std, &mut rng);
    let mut items = EmbeddingTable::gaussian(train.n_items(), d, cfg.init_std, &mut rng);
    let mut net = NcfNet::init(d, cfg.hidden, &mut rng);

    let sampler = NegativeSampler::new(train);
    let pos = positives(train);
    let mut order: Vec<usize> = (0..pos.len()).collect();
    let mut batch: Vec<(u32, u32, bool)> = Vec::with_capacity(cfg.batch_size);
    let (lr, l2) = (cfg.learning_rate, cfg.l2_reg);

    let mut gu = EmbeddingTable::zeros(train.n_users(), d);
    let mut gi = EmbeddingTable::zeros(train.n_items(), d);
    let mut occ_u = vec![0u32; train.n_users()];
    let mut occ_i = vec![0u32; train.n_items()];

    let mut step = |users: &mut EmbeddingTable,
                    items: &mut EmbeddingTable,
                    net: &mut NcfNet,
                    batch: &[(u32, u32, bool)]| {
        let mut g = NcfGrad::zeros(d, net.hidden);
        for &(u, i, label) in batch {
            g.user.iter_mut().for_each(|v| *v = 0.0);
            g.item.iter_mut().for_each(|v| *v = 0.0);
            net.accumulate(users.row(u as usize), items.row(i as usize), label, &mut g);
            for (a, b) in gu.row_mut(u as usize).iter_mut().zip(&g.user) {
                *a += b;
            }
            for (a, b) in gi.row_mut(i as usize).iter_mut().zip(&g.item) {
                *a += b;
            }
            occ_u[u as usize] += 1;
            occ_i[i as usize] += 1;
        }
        let n = batch.len() as f64;
        for (w, gw) in net.w1.iter_mut().zip(&g.w1) {
            *w -= lr * (gw + l2 * n * *w);
        }
        for (w, gw) in net.w2.iter_mut().zip(&g.w2) {
            *w -= lr * (gw + l2 * n * *w);
        }
        for (b, gb) in net.b1.iter_mut().zip(&g.b1) {
            *b -= lr * gb;
        }
        net.b2 -= lr * g.b2;
        for &(u, i, _) in batch {
            for (table, grads, occ, r) in [
                (&mut *users, &mut gu, &mut occ_u, u as usize),
                (&mut *items, &mut gi, &mut occ_i, i as usize),
            ] {
                if occ[r] == 0 {
                    continue;
                }
                let c = occ[r] as f64;
                let gr = grads.row_mut(r);
                for (k, e) in table.row_mut(r).iter_mut().enumerate() {
                    *e -= lr * (gr[k] + l2 * c * *e);
                    gr[k] = 0.0;
                }
                occ[r] = 0;
            }
        }
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &p in &order {
            let (u, i) = pos[p];
            let mut push = |sample, batch: &mut Vec<(u32, u32, bool)>| {
                batch.push(sample);
                if batch.len() == cfg.batch_size {
                    step(&mut users, &mut items, &mut net, batch);
                    batch.clear();
                }
            };
            push((u, i, true), &mut batch);
            for _ in 0..cfg.negatives_per_positive {
                if let Some(j) = sampler.sample(&mut rng, u) {
                    push((u, j, false), &mut batch);
                }
            }
        }
        if !batch.is_empty() {
            step(&mut users, &mut items, &mut net, &batch);
            batch.clear();
        }
        if !(users.all_finite() && items.all_finite() && net.all_finite()) {
            return Err(Error::Divergence {
                model: "ncf",
                epoch,
            });
        }
    }
    Ok((users, items, net))
}
