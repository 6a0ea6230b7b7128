//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the crate's model or kernels: the aggregation,
//! scoring and loss are recomputed from plain triples with nested loops over
//! `Vec<Vec<f64>>`, and gradients are taken by central finite differences.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Table = Vec<Vec<f64>>;

/// Random small graph: distinct triples over `ne` entities and `nr` relations,
/// self-loops allowed. Every relation id is used at least once when possible.
pub fn random_triples(rng: &mut impl Rng, ne: u32, nr: u32, count: usize) -> Vec<(u32, u32, u32)> {
    let mut out: Vec<(u32, u32, u32)> = Vec::new();
    let max = (ne * ne * nr) as usize;
    let count = count.min(max);
    let mut r = 0;
    while out.len() < count {
        let t = (rng.gen_range(0..ne), r % nr, rng.gen_range(0..ne));
        r += 1;
        if !out.contains(&t) {
            out.push(t);
        } else {
            r = rng.gen_range(0..nr);
        }
    }
    out
}

pub fn random_table(rng: &mut impl Rng, rows: usize, dim: usize, scale: f64) -> Table {
    (0..rows).map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn score(a: &[f64], r: &[f64], b: &[f64]) -> f64 {
    (0..a.len()).map(|m| a[m] * r[m] * b[m]).sum()
}

/// `exp(x_i - max) / Σ exp(x - max)`
fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|s| (s - max).exp()).sum();
    x.iter().map(|s| (s - max).exp() / z).collect()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Per-layer entity and relation activations computed straight from the
/// context definitions. Triples listed in `excluded` contribute no context.
pub fn naive_aggregate(
    triples: &[(u32, u32, u32)],
    excluded: &[usize],
    entities: &Table,
    relations: &Table,
    layers: usize,
) -> (Vec<Table>, Vec<Table>) {
    let ne = entities.len();
    let nr = relations.len();
    let live: Vec<(u32, u32, u32)> = triples
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .map(|(_, &t)| t)
        .collect();
    let mut es = vec![entities.clone()];
    let mut rs = vec![relations.clone()];
    for _ in 0..layers {
        let (e, r) = (es.last().unwrap().clone(), rs.last().unwrap().clone());
        let dim = e[0].len();
        let mut e_next = e.clone();
        for i in 0..ne as u32 {
            // (rel, neighbor) for every triple touching i; a self-loop counts once.
            let mut ctx: Vec<(usize, usize)> = Vec::new();
            for &(h, rel, t) in &live {
                if h == i {
                    ctx.push((rel as usize, t as usize));
                } else if t == i {
                    ctx.push((rel as usize, h as usize));
                }
            }
            let logits: Vec<f64> = ctx.iter().map(|&(j, k)| score(&e[i as usize], &r[j], &e[k])).collect();
            for (&(j, k), a) in ctx.iter().zip(softmax(&logits)) {
                for m in 0..dim {
                    e_next[i as usize][m] += a * r[j][m] * e[k][m];
                }
            }
        }
        let mut r_next = r.clone();
        for i in 0..nr as u32 {
            let ctx: Vec<(usize, usize)> = live.iter().filter(|t| t.1 == i).map(|t| (t.0 as usize, t.2 as usize)).collect();
            let logits: Vec<f64> = ctx.iter().map(|&(a, b)| score(&e[a], &r[i as usize], &e[b])).collect();
            for (&(a, b), w) in ctx.iter().zip(softmax(&logits)) {
                for m in 0..dim {
                    r_next[i as usize][m] += w * e[a][m] * e[b][m];
                }
            }
        }
        es.push(e_next);
        rs.push(r_next);
    }
    (es, rs)
}

/// Batch-mean relation cross-entropy on the final layer (no regularisation).
pub fn naive_cross_entropy(
    triples: &[(u32, u32, u32)],
    batch: &[usize],
    exclude_self: bool,
    entities: &Table,
    relations: &Table,
    layers: usize,
) -> f64 {
    let excluded: Vec<usize> = if exclude_self { batch.to_vec() } else { Vec::new() };
    let (es, rs) = naive_aggregate(triples, &excluded, entities, relations, layers);
    let (e, r) = (es.last().unwrap(), rs.last().unwrap());
    let mut total = 0.0;
    for &b in batch {
        let (h, rel, t) = triples[b];
        let scores: Vec<f64> = r.iter().map(|rj| score(&e[h as usize], rj, &e[t as usize])).collect();
        total += log_sum_exp(&scores) - scores[rel as usize];
    }
    total / batch.len() as f64
}

/// Minimal DistMult relation-prediction model: loss and gradient for raw embeddings.
pub fn distmult_loss_and_grad(triples: &[(u32, u32, u32)], batch: &[usize], entities: &Table, relations: &Table) -> (f64, Table, Table) {
    let dim = entities[0].len();
    let mut ge = vec![vec![0.0; dim]; entities.len()];
    let mut gr = vec![vec![0.0; dim]; relations.len()];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for &b in batch {
        let (h, rel, t) = triples[b];
        let (h, t) = (h as usize, t as usize);
        let scores: Vec<f64> = relations.iter().map(|rj| score(&entities[h], rj, &entities[t])).collect();
        loss += log_sum_exp(&scores) - scores[rel as usize];
        for (j, p) in softmax(&scores).into_iter().enumerate() {
            let c = (p - if j == rel as usize { 1.0 } else { 0.0 }) / n;
            for m in 0..dim {
                ge[h][m] += c * relations[j][m] * entities[t][m];
                ge[t][m] += c * relations[j][m] * entities[h][m];
                gr[j][m] += c * entities[h][m] * entities[t][m];
            }
        }
    }
    (loss / n, ge, gr)
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Denominator floor for entries whose true gradient is (near) zero.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, REL_ERR_FLOOR)`
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

/// Plain scalar Adam with bias correction, one coordinate at a time.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new() -> Self {
        Self { m: 0.0, v: 0.0, t: 0 }
    }

    pub fn update(&mut self, x: f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        x - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// Overfit fixture: 50 train triples over 25 entities and 5 relations, with
/// no two triples sharing an unordered entity pair.
pub fn overfit_triples() -> Vec<(u32, u32, u32)> {
    let mut r = rng(2024);
    let mut out: Vec<(u32, u32, u32)> = Vec::new();
    while out.len() < 50 {
        let (h, t) = (r.gen_range(0..25u32), r.gen_range(0..25u32));
        if h == t || out.iter().any(|&(a, _, b)| (a, b) == (h, t) || (a, b) == (t, h)) {
            continue;
        }
        out.push((h, out.len() as u32 % 5, t));
    }
    out
}

pub fn overfit_tsv() -> String {
    overfit_triples().iter().map(|(h, r, t)| format!("e{h}\tr{r}\te{t}\n")).collect()
}
