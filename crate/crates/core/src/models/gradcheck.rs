//! Central finite-difference checks of the analytic training gradients.
//!
//! Each check draws random parameters and returns the worst relative error
//! over every coordinate, so callers choose their own tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bpr_triple_grad, bpr_triple_loss, pairwise_grad, pairwise_loss, EmbeddingTable, Graph, NcfNet,
};

pub const STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so exact zeros compare
/// against FD round-off rather than dividing by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(-1.0..1.0) * scale)
        .collect()
}

fn table(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_values(rows, dim, gauss_vec(rng, rows * dim, 0.8)).unwrap()
}

/// Worst relative error of the single-triple BPR gradient over `points`
/// random parameter draws (every coordinate checked).
pub fn bpr_triple(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let l2 = rng.random_range(0.0..0.1);
        let mut x = [
            gauss_vec(&mut rng, d, 1.0),
            gauss_vec(&mut rng, d, 1.0),
            gauss_vec(&mut rng, d, 1.0),
        ];
        let g = bpr_triple_grad(&x[0], &x[1], &x[2], l2);
        let analytic = [g.user, g.pos, g.neg];
        for part in 0..3 {
            for k in 0..d {
                let orig = x[part][k];
                let n = central(
                    |v| {
                        x[part][k] = v;
                        bpr_triple_loss(&x[0], &x[1], &x[2], l2)
                    },
                    orig,
                );
                x[part][k] = orig;
                worst = worst.max(rel_err(analytic[part][k], n));
            }
        }
    }
    worst
}

fn random_triples(
    rng: &mut ChaCha8Rng,
    users: usize,
    items: usize,
    n: usize,
) -> Vec<(u32, u32, u32)> {
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..items as u32);
            let mut j = rng.random_range(0..items as u32 - 1);
            if j >= i {
                j += 1;
            }
            (rng.random_range(0..users as u32), i, j)
        })
        .collect()
}

/// Worst relative error of the batched pairwise gradient with respect to the
/// layer-0 embeddings; `layers = None` is plain BPR-MF, `Some(l)` LightGCN.
pub fn pairwise(points: usize, seed: u64, layers: Option<usize>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_users, n_items, d) = (6, 9, 4);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let edges: Vec<(u32, u32)> = (0..14)
            .map(|_| {
                (
                    rng.random_range(0..n_users as u32),
                    rng.random_range(0..n_items as u32),
                )
            })
            .collect();
        let graph = Graph::from_edges(n_users, n_items, &edges);
        let prop = layers.map(|l| (&graph, l));
        let triples = random_triples(&mut rng, n_users, n_items, 5);
        let l2 = rng.random_range(0.0..0.1);
        let mut users = table(&mut rng, n_users, d);
        let mut items = table(&mut rng, n_items, d);
        let (gu, gi) = pairwise_grad(prop, &users, &items, &triples, l2);
        for idx in 0..users.values().len() {
            let orig = users.values()[idx];
            let n = central(
                |v| {
                    users.values_mut()[idx] = v;
                    pairwise_loss(prop, &users, &items, &triples, l2)
                },
                orig,
            );
            users.values_mut()[idx] = orig;
            worst = worst.max(rel_err(gu.values()[idx], n));
        }
        for idx in 0..items.values().len() {
            let orig = items.values()[idx];
            let n = central(
                |v| {
                    items.values_mut()[idx] = v;
                    pairwise_loss(prop, &users, &items, &triples, l2)
                },
                orig,
            );
            items.values_mut()[idx] = orig;
            worst = worst.max(rel_err(gi.values()[idx], n));
        }
    }
    worst
}

/// Random network whose hidden pre-activations stay clear of the ReLU kink,
/// where the loss is not differentiable.
fn ncf_point(rng: &mut ChaCha8Rng, d: usize, h: usize) -> (NcfNet, Vec<f64>, Vec<f64>) {
    loop {
        let net = NcfNet::from_parts(
            d,
            h,
            gauss_vec(rng, h * 2 * d, 0.7),
            gauss_vec(rng, h, 0.3),
            gauss_vec(rng, h, 1.0),
            rng.random_range(-0.5..0.5),
        )
        .unwrap();
        let p = gauss_vec(rng, d, 1.0);
        let q = gauss_vec(rng, d, 1.0);
        let up = net.project_user(&p);
        let ip = net.project_item(&q);
        if (0..h).all(|j| (up[j] + ip[j] + net.b1[j]).abs() > 1e-2) {
            return (net, p, q);
        }
    }
}

/// Worst relative error of the NCF per-sample gradient (all parameters).
pub fn ncf(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h) = (4, 6);
    let mut worst = 0.0f64;
    for point in 0..points {
        let (mut net, mut p, mut q) = ncf_point(&mut rng, d, h);
        let label = point % 2 == 0;
        let l2 = rng.random_range(0.0..0.1);
        let g = net.sample_grad(&p, &q, label, l2);
        for k in 0..p.len() {
            let orig = p[k];
            let n = central(
                |v| {
                    p[k] = v;
                    net.sample_loss(&p, &q, label, l2)
                },
                orig,
            );
            p[k] = orig;
            worst = worst.max(rel_err(g.user[k], n));
            let orig = q[k];
            let n = central(
                |v| {
                    q[k] = v;
                    net.sample_loss(&p, &q, label, l2)
                },
                orig,
            );
            q[k] = orig;
            worst = worst.max(rel_err(g.item[k], n));
        }
        for k in 0..net.w1.len() {
            let orig = net.w1[k];
            let n = central(
                |v| {
                    net.w1[k] = v;
                    net.sample_loss(&p, &q, label, l2)
                },
                orig,
            );
            net.w1[k] = orig;
            worst = worst.max(rel_err(g.w1[k], n));
        }
        for k in 0..h {
            let orig = net.b1[k];
            let n = central(
                |v| {
                    net.b1[k] = v;
                    net.sample_loss(&p, &q, label, l2)
                },
                orig,
            );
            net.b1[k] = orig;
            worst = worst.max(rel_err(g.b1[k], n));
            let orig = net.w2[k];
            let n = central(
                |v| {
                    net.w2[k] = v;
                    net.sample_loss(&p, &q, label, l2)
                },
                orig,
            );
            net.w2[k] = orig;
            worst = worst.max(rel_err(g.w2[k], n));
        }
        let orig = net.b2;
        let n = central(
            |v| {
                net.b2 = v;
                net.sample_loss(&p, &q, label, l2)
            },
            orig,
        );
        net.b2 = orig;
        worst = worst.max(rel_err(g.b2, n));
    }
    worst
}
