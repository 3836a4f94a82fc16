//! BPR triple loss, LightGCN graph propagation, and the mini-batch SGD loop
//! they share.
//!
//! BPR-MF is the special case with no propagation: the scoring
//! representations are the trainable (layer-0) embeddings themselves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dot, log_sigmoid, positives, sigmoid, EmbeddingTable, NegativeSampler, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::InteractionLog;

/// BPR loss of one triple `(u, i⁺, i⁻)` with L2 on the three vectors:
/// `-ln σ(⟨p, q⁺ - q⁻⟩) + l2/2 (‖p‖² + ‖q⁺‖² + ‖q⁻‖²)`.
pub fn bpr_triple_loss(p: &[f64], q_pos: &[f64], q_neg: &[f64], l2: f64) -> f64 {
    let x = dot(p, q_pos) - dot(p, q_neg);
    let sq = |v: &[f64]| dot(v, v);
    -log_sigmoid(x) + 0.5 * l2 * (sq(p) + sq(q_pos) + sq(q_neg))
}

/// Gradient of [`bpr_triple_loss`] with respect to each vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseGrad {
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

pub fn bpr_triple_grad(p: &[f64], q_pos: &[f64], q_neg: &[f64], l2: f64) -> PairwiseGrad {
    let x = dot(p, q_pos) - dot(p, q_neg);
    let s = sigmoid(-x);
    PairwiseGrad {
        user: (0..p.len())
            .map(|k| -s * (q_pos[k] - q_neg[k]) + l2 * p[k])
            .collect(),
        pos: (0..p.len()).map(|k| -s * p[k] + l2 * q_pos[k]).collect(),
        neg: (0..p.len()).map(|k| s * p[k] + l2 * q_neg[k]).collect(),
    }
}

/// Undirected user–item graph with unique edges.
#[derive(Debug, Clone)]
pub struct Graph {
    user_adj: Vec<Vec<u32>>,
    item_adj: Vec<Vec<u32>>,
}

impl Graph {
    pub fn from_log(log: &InteractionLog) -> Self {
        let user_adj = log.user_item_sets();
        let mut item_adj = vec![Vec::new(); log.n_items()];
        for (u, items) in user_adj.iter().enumerate() {
            for &i in items {
                item_adj[i as usize].push(u as u32);
            }
        }
        Self { user_adj, item_adj }
    }

    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(u32, u32)]) -> Self {
        let mut user_adj = vec![Vec::new(); n_users];
        let mut item_adj = vec![Vec::new(); n_items];
        for &(u, i) in edges {
            user_adj[u as usize].push(i);
            item_adj[i as usize].push(u);
        }
        for adj in user_adj.iter_mut().chain(item_adj.iter_mut()) {
            adj.sort_unstable();
            adj.dedup();
        }
        Self { user_adj, item_adj }
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.user_adj[u as usize].len()
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.item_adj[i as usize].len()
    }

    /// One symmetric-normalised propagation step:
    /// `e'_u = Σ_{i∈N(u)} e_i / √(|N(u)||N(i)|)` and symmetrically for items.
    pub fn layer(
        &self,
        users: &EmbeddingTable,
        items: &EmbeddingTable,
    ) -> (EmbeddingTable, EmbeddingTable) {
        let d = users.dim();
        let mut next_u = EmbeddingTable::zeros(users.rows(), d);
        let mut next_i = EmbeddingTable::zeros(items.rows(), d);
        let spread =
            |out: &mut [f64], adj: &[u32], other: &EmbeddingTable, other_adj: &[Vec<u32>]| {
                let deg = adj.len() as f64;
                for &n in adj {
                    let norm = (deg * other_adj[n as usize].len() as f64).sqrt();
                    for (o, v) in out.iter_mut().zip(other.row(n as usize)) {
                        *o += v / norm;
                    }
                }
            };
        next_u
            .values_mut()
            .par_chunks_mut(d)
            .zip(self.user_adj.par_iter())
            .for_each(|(out, adj)| spread(out, adj, items, &self.item_adj));
        next_i
            .values_mut()
            .par_chunks_mut(d)
            .zip(self.item_adj.par_iter())
            .for_each(|(out, adj)| spread(out, adj, users, &self.user_adj));
        (next_u, next_i)
    }

    /// Mean of layers `0..=layers`. Isolated nodes keep their layer-0 vector.
    ///
    /// The map is linear and symmetric, so applying it to gradients with
    /// respect to the output gives gradients with respect to layer 0.
    pub fn propagate(
        &self,
        users: &EmbeddingTable,
        items: &EmbeddingTable,
        layers: usize,
    ) -> (EmbeddingTable, EmbeddingTable) {
        let mut acc_u = users.clone();
        let mut acc_i = items.clone();
        let (mut cur_u, mut cur_i) = (users.clone(), items.clone());
        for _ in 0..layers {
            let (nu, ni) = self.layer(&cur_u, &cur_i);
            add_assign(&mut acc_u, &nu);
            add_assign(&mut acc_i, &ni);
            cur_u = nu;
            cur_i = ni;
        }
        let scale = 1.0 / (layers as f64 + 1.0);
        acc_u.values_mut().iter_mut().for_each(|v| *v *= scale);
        acc_i.values_mut().iter_mut().for_each(|v| *v *= scale);
        for (u, adj) in self.user_adj.iter().enumerate() {
            if adj.is_empty() {
                acc_u.row_mut(u).copy_from_slice(users.row(u));
            }
        }
        for (i, adj) in self.item_adj.iter().enumerate() {
            if adj.is_empty() {
                acc_i.row_mut(i).copy_from_slice(items.row(i));
            }
        }
        (acc_u, acc_i)
    }
}

fn add_assign(acc: &mut EmbeddingTable, x: &EmbeddingTable) {
    for (a, b) in acc.values_mut().iter_mut().zip(x.values()) {
        *a += b;
    }
}

/// Optional propagation: the graph and its depth.
pub type Propagation<'a> = Option<(&'a Graph, usize)>;

/// Total loss of a batch of triples, with representations obtained from the
/// layer-0 embeddings through `propagation`.
pub fn pairwise_loss(
    propagation: Propagation<'_>,
    ego_users: &EmbeddingTable,
    ego_items: &EmbeddingTable,
    triples: &[(u32, u32, u32)],
    l2: f64,
) -> f64 {
    let propagated;
    let (fu, fi) = match propagation {
        Some((g, layers)) => {
            propagated = g.propagate(ego_users, ego_items, layers);
            (&propagated.0, &propagated.1)
        }
        None => (ego_users, ego_items),
    };
    let sq = |v: &[f64]| dot(v, v);
    triples
        .iter()
        .map(|&(u, i, j)| {
            let (u, i, j) = (u as usize, i as usize, j as usize);
            let x = dot(fu.row(u), fi.row(i)) - dot(fu.row(u), fi.row(j));
            -log_sigmoid(x)
                + 0.5 * l2 * (sq(ego_users.row(u)) + sq(ego_items.row(i)) + sq(ego_items.row(j)))
        })
        .sum()
}

/// Accumulates `∂(-ln σ(x))/∂f` for each triple into `gu` / `gi` and counts
/// row occurrences for the L2 term.
fn accumulate_data_grads(
    fu: &EmbeddingTable,
    fi: &EmbeddingTable,
    triples: &[(u32, u32, u32)],
    gu: &mut EmbeddingTable,
    gi: &mut EmbeddingTable,
    occ_u: &mut [u32],
    occ_i: &mut [u32],
) {
    let d = fu.dim();
    for &(u, i, j) in triples {
        let (u, i, j) = (u as usize, i as usize, j as usize);
        let pu = fu.row(u);
        let (qi, qj) = (fi.row(i), fi.row(j));
        let x = dot(pu, qi) - dot(pu, qj);
        let s = sigmoid(-x);
        let g = gu.row_mut(u);
        for k in 0..d {
            g[k] -= s * (qi[k] - qj[k]);
        }
        let g = gi.row_mut(i);
        for k in 0..d {
            g[k] -= s * pu[k];
        }
        let g = gi.row_mut(j);
        for k in 0..d {
            g[k] += s * pu[k];
        }
        occ_u[u] += 1;
        occ_i[i] += 1;
        occ_i[j] += 1;
    }
}

#[inline]
fn with_l2(g: f64, l2: f64, occ: u32, e: f64) -> f64 {
    g + l2 * occ as f64 * e
}

/// Gradient of [`pairwise_loss`] with respect to the layer-0 embeddings.
pub fn pairwise_grad(
    propagation: Propagation<'_>,
    ego_users: &EmbeddingTable,
    ego_items: &EmbeddingTable,
    triples: &[(u32, u32, u32)],
    l2: f64,
) -> (EmbeddingTable, EmbeddingTable) {
    let d = ego_users.dim();
    let mut gu = EmbeddingTable::zeros(ego_users.rows(), d);
    let mut gi = EmbeddingTable::zeros(ego_items.rows(), d);
    let mut occ_u = vec![0u32; ego_users.rows()];
    let mut occ_i = vec![0u32; ego_items.rows()];
    match propagation {
        Some((g, layers)) => {
            let (fu, fi) = g.propagate(ego_users, ego_items, layers);
            accumulate_data_grads(&fu, &fi, triples, &mut gu, &mut gi, &mut occ_u, &mut occ_i);
            (gu, gi) = g.propagate(&gu, &gi, layers);
        }
        None => accumulate_data_grads(
            ego_users, ego_items, triples, &mut gu, &mut gi, &mut occ_u, &mut occ_i,
        ),
    }
    for (r, &occ) in occ_u.iter().enumerate() {
        let e = ego_users.row(r);
        for (k, g) in gu.row_mut(r).iter_mut().enumerate() {
            *g = with_l2(*g, l2, occ, e[k]);
        }
    }
    for (r, &occ) in occ_i.iter().enumerate() {
        let e = ego_items.row(r);
        for (k, g) in gi.row_mut(r).iter_mut().enumerate() {
            *g = with_l2(*g, l2, occ, e[k]);
        }
    }
    (gu, gi)
}

/// Reusable gradient buffers for the sparse (no propagation) update path.
struct SparseStep {
    gu: EmbeddingTable,
    gi: EmbeddingTable,
    occ_u: Vec<u32>,
    occ_i: Vec<u32>,
}

impl SparseStep {
    fn new(n_users: usize, n_items: usize, d: usize) -> Self {
        Self {
            gu: EmbeddingTable::zeros(n_users, d),
            gi: EmbeddingTable::zeros(n_items, d),
            occ_u: vec![0; n_users],
            occ_i: vec![0; n_items],
        }
    }

    fn apply(
        &mut self,
        users: &mut EmbeddingTable,
        items: &mut EmbeddingTable,
        triples: &[(u32, u32, u32)],
        lr: f64,
        l2: f64,
    ) {
        accumulate_data_grads(
            users,
            items,
            triples,
            &mut self.gu,
            &mut self.gi,
            &mut self.occ_u,
            &mut self.occ_i,
        );
        let update =
            |table: &mut EmbeddingTable, grads: &mut EmbeddingTable, occ: &mut [u32], r: usize| {
                if occ[r] == 0 {
                    return;
                }
                let g = grads.row_mut(r);
                for (k, e) in table.row_mut(r).iter_mut().enumerate() {
                    *e -= lr * with_l2(g[k], l2, occ[r], *e);
                    g[k] = 0.0;
                }
                occ[r] = 0;
            };
        for &(u, i, j) in triples {
            update(users, &mut self.gu, &mut self.occ_u, u as usize);
            update(items, &mut self.gi, &mut self.occ_i, i as usize);
            update(items, &mut self.gi, &mut self.occ_i, j as usize);
        }
    }
}

fn apply_dense(table: &mut EmbeddingTable, grads: &EmbeddingTable, lr: f64) {
    for (e, g) in table.values_mut().iter_mut().zip(grads.values()) {
        *e -= lr * g;
    }
}

/// Mini-batch SGD on the BPR objective. Returns the layer-0 embeddings.
///
/// Gradients of a batch are evaluated at the batch-start parameters and
/// summed; with `batch_size = 1` this is plain per-triple SGD. The random
/// stream is consumed in a fixed order (user init, item init, then per epoch
/// a shuffle followed by negative draws), so a given seed determines every
/// parameter bit-for-bit.
pub(crate) fn train(
    train: &InteractionLog,
    cfg: &TrainConfig,
    propagation: Propagation<'_>,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training log".into()));
    }
    let model = if propagation.is_some() {
        "lightgcn"
    } else {
        "bpr-mf"
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;
    let mut users = EmbeddingTable::gaussian(train.n_users(), d, cfg.init_std, &mut rng);
    let mut items = EmbeddingTable::gaussian(train.n_items(), d, cfg.init_std, &mut rng);

    let sampler = NegativeSampler::new(train);
    let pos = positives(train);
    let mut order: Vec<usize> = (0..pos.len()).collect();
    let mut sparse = SparseStep::new(train.n_users(), train.n_items(), d);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut step =
        |users: &mut EmbeddingTable, items: &mut EmbeddingTable, batch: &[(u32, u32, u32)]| {
            match propagation {
                None => sparse.apply(users, items, batch, cfg.learning_rate, cfg.l2_reg),
                Some(_) => {
                    let (gu, gi) = pairwise_grad(propagation, users, items, batch, cfg.l2_reg);
                    apply_dense(users, &gu, cfg.learning_rate);
                    apply_dense(items, &gi, cfg.learning_rate);
                }
            }
        };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &p in &order {
            let (u, i) = pos[p];
            for _ in 0..cfg.negatives_per_positive {
                if let Some(j) = sampler.sample(&mut rng, u) {
                    batch.push((u, i, j));
                    if batch.len() == cfg.batch_size {
                        step(&mut users, &mut items, &batch);
                        batch.clear();
                    }
                }
            }
        }
        if !batch.is_empty() {
            step(&mut users, &mut items, &batch);
            batch.clear();
        }
        if !(users.all_finite() && items.all_finite()) {
            return Err(Error::Divergence { model, epoch });
        }
    }
    Ok((users, items))
}
