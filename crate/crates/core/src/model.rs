//! Multi-layer context aggregation, relation scoring, and the hand-derived
//! backward pass of the relation-prediction loss.
//!
//! One aggregation layer maps activations `(E, R)` to `(E', R')`:
//!
//! ```text
//! s_p   = <E[i], R[j], E[k]>               for entity pair p = (j, k) of entity i
//! α     = softmax over each entity segment of s
//! E'[i] = E[i] + Σ_p α_p · (R[j] ⊙ E[k])
//!
//! t_q   = <E[a], R[i], E[b]>               for relation pair q = (a, b) of relation i
//! β     = softmax over each relation segment of t
//! R'[i] = R[i] + Σ_q β_q · (E[a] ⊙ E[b])
//! ```
//!
//! Both halves read only layer-`l` activations. After the last layer every
//! `(head, tail)` query is scored against all relations with DistMult.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::context::ContextIndex;
use crate::kernels::{self, HadamardMessages, Reduction};
use crate::kg::{Triple, TripleId};
use crate::real::{Matrix, Real};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("non-finite gradient in batch {batch}")]
    NonFiniteGradient { batch: usize },
    #[error("batch {batch} is empty")]
    EmptyBatch { batch: usize },
}

/// Trainable parameters: one row per entity and one per relation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState<T> {
    pub entities: Matrix<T>,
    pub relations: Matrix<T>,
}

impl<T: Real> EmbeddingState<T> {
    /// Entries drawn uniformly from `[-√(6/dim), √(6/dim)]` with a seeded ChaCha8 stream
    /// (entities first, then relations). Sampling happens in `f64`, so `f32` and `f64`
    /// states built from the same seed agree up to rounding.
    pub fn init(num_entities: usize, num_relations: usize, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let bound = Float::sqrt(6.0 / dim as f64);
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize| {
            let data = (0..rows * dim).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
            Matrix::from_vec(rows, dim, data)
        };
        let entities = draw(num_entities);
        let relations = draw(num_relations);
        Self { entities, relations }
    }

    pub fn new(entities: Matrix<T>, relations: Matrix<T>) -> Self {
        assert_eq!(entities.dim(), relations.dim(), "entity and relation dims differ");
        Self { entities, relations }
    }

    pub fn dim(&self) -> usize {
        self.entities.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }

    pub fn cast<U: Real>(&self) -> EmbeddingState<U> {
        EmbeddingState {
            entities: self.entities.cast(),
            relations: self.relations.cast(),
        }
    }
}

/// Controls how contexts are filtered before aggregation.
#[derive(Clone, Copy, Debug, Default)]
pub struct AggregateOptions<'a> {
    pub layers: usize,
    /// Triple ids (as a mask over all triples) whose context pairs are dropped.
    pub exclude: Option<&'a [bool]>,
    /// Keep at most this many pairs per segment, sampled with the given seed.
    pub neighbor_cap: Option<(usize, u64)>,
    pub reduction: Reduction,
}

impl AggregateOptions<'_> {
    pub fn layers(layers: usize) -> Self {
        Self {
            layers,
            ..Self::default()
        }
    }
}

/// Activations for layers `0..=L` plus the attention logits and weights of
/// every layer, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<'c, T> {
    ctx: Cow<'c, ContextIndex>,
    /// `[rel, neighbor]` per entity-context pair.
    entity_index: Vec<[u32; 2]>,
    /// `[head, tail]` per relation-context pair.
    relation_index: Vec<[u32; 2]>,
    /// Segment owner per entity-context pair.
    entity_owner: Vec<u32>,
    relation_owner: Vec<u32>,
    entity_acts: Vec<Matrix<T>>,
    relation_acts: Vec<Matrix<T>>,
    entity_logits: Vec<Vec<T>>,
    alpha: Vec<Vec<T>>,
    relation_logits: Vec<Vec<T>>,
    beta: Vec<Vec<T>>,
    reduction: Reduction,
}

impl<'c, T: Real> LayerTrace<'c, T> {
    pub fn num_layers(&self) -> usize {
        self.alpha.len()
    }

    /// The (possibly filtered) context the trace was computed over.
    pub fn context(&self) -> &ContextIndex {
        &self.ctx
    }

    pub fn entity_act(&self, layer: usize) -> &Matrix<T> {
        &self.entity_acts[layer]
    }

    pub fn relation_act(&self, layer: usize) -> &Matrix<T> {
        &self.relation_acts[layer]
    }

    pub fn final_entities(&self) -> &Matrix<T> {
        self.entity_acts.last().unwrap()
    }

    pub fn final_relations(&self) -> &Matrix<T> {
        self.relation_acts.last().unwrap()
    }

    /// Attention logits `s` over entity-context pairs at `layer < L`.
    pub fn entity_logits(&self, layer: usize) -> &[T] {
        &self.entity_logits[layer]
    }

    pub fn alpha(&self, layer: usize) -> &[T] {
        &self.alpha[layer]
    }

    pub fn relation_logits(&self, layer: usize) -> &[T] {
        &self.relation_logits[layer]
    }

    pub fn beta(&self, layer: usize) -> &[T] {
        &self.beta[layer]
    }

    /// Scores of every relation for each `(head, tail)` query: a `queries × |R|` table.
    pub fn score_relations(&self, queries: &[(u32, u32)]) -> Matrix<T> {
        relation_scores(self.final_entities(), self.final_relations(), queries, self.reduction)
    }
}

/// Runs `options.layers` aggregation layers over `ctx`.
pub fn aggregate<'c, T: Real>(state: &EmbeddingState<T>, ctx: &'c ContextIndex, options: AggregateOptions<'_>) -> LayerTrace<'c, T> {
    assert_eq!(ctx.num_entities(), state.entities.rows(), "context/entity table size mismatch");
    assert_eq!(ctx.num_relations(), state.relations.rows(), "context/relation table size mismatch");
    assert_eq!(state.entities.dim(), state.relations.dim(), "entity and relation dims differ");

    let mut ctx: Cow<'c, ContextIndex> = Cow::Borrowed(ctx);
    if let Some(mask) = options.exclude {
        ctx = Cow::Owned(ctx.without_sources(mask));
    }
    if let Some((cap, seed)) = options.neighbor_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ctx = Cow::Owned(ctx.capped(cap, &mut rng));
    }

    let entity_index: Vec<[u32; 2]> = ctx.entity_pairs().iter().map(|p| [p.rel, p.entity]).collect();
    let relation_index: Vec<[u32; 2]> = ctx.relation_pairs().iter().map(|p| [p.head, p.tail]).collect();
    let entity_owner = owners(ctx.entity_offsets());
    let relation_owner = owners(ctx.relation_offsets());

    let layers = options.layers;
    let reduction = options.reduction;
    let mut trace = LayerTrace {
        entity_acts: Vec::with_capacity(layers + 1),
        relation_acts: Vec::with_capacity(layers + 1),
        entity_logits: Vec::with_capacity(layers),
        alpha: Vec::with_capacity(layers),
        relation_logits: Vec::with_capacity(layers),
        beta: Vec::with_capacity(layers),
        ctx,
        entity_index,
        relation_index,
        entity_owner,
        relation_owner,
        reduction,
    };
    trace.entity_acts.push(state.entities.clone());
    trace.relation_acts.push(state.relations.clone());

    for _ in 0..layers {
        let ents = trace.entity_acts.last().unwrap();
        let rels = trace.relation_acts.last().unwrap();
        let ctx = &*trace.ctx;

        let s = pair_scores(&trace.entity_owner, &trace.entity_index, |own, [j, k]| {
            kernels::distmult_score(ents.row(own), rels.row(j), ents.row(k))
        }, reduction);
        let mut alpha = vec![T::zero(); s.len()];
        kernels::segment_softmax(ctx.entity_offsets(), &s, &mut alpha, reduction);
        let mut next_ents = Matrix::zeros(ents.rows(), ents.dim());
        let msgs = HadamardMessages {
            left: rels,
            right: ents,
            index: &trace.entity_index,
        };
        kernels::segment_weighted_sum(ctx.entity_offsets(), &alpha, &msgs, next_ents.as_mut_slice(), reduction);
        add_assign(next_ents.as_mut_slice(), ents.as_slice());

        let t = pair_scores(&trace.relation_owner, &trace.relation_index, |own, [a, b]| {
            kernels::distmult_score(ents.row(a), rels.row(own), ents.row(b))
        }, reduction);
        let mut beta = vec![T::zero(); t.len()];
        kernels::segment_softmax(ctx.relation_offsets(), &t, &mut beta, reduction);
        let mut next_rels = Matrix::zeros(rels.rows(), rels.dim());
        let msgs = HadamardMessages {
            left: ents,
            right: ents,
            index: &trace.relation_index,
        };
        kernels::segment_weighted_sum(ctx.relation_offsets(), &beta, &msgs, next_rels.as_mut_slice(), reduction);
        add_assign(next_rels.as_mut_slice(), rels.as_slice());

        trace.entity_logits.push(s);
        trace.alpha.push(alpha);
        trace.relation_logits.push(t);
        trace.beta.push(beta);
        trace.entity_acts.push(next_ents);
        trace.relation_acts.push(next_rels);
    }
    trace
}

fn owners(offsets: &[usize]) -> Vec<u32> {
    let mut out = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    for (s, w) in offsets.windows(2).enumerate() {
        out.extend(core::iter::repeat_n(s as u32, w[1] - w[0]));
    }
    out
}

/// `sum[i] = base[i] + sum[i]`
fn add_assign<T: Real>(sum: &mut [T], base: &[T]) {
    for (o, &b) in sum.iter_mut().zip(base) {
        *o = b + *o;
    }
}

fn pair_scores<T: Real, F>(owner: &[u32], index: &[[u32; 2]], score: F, reduction: Reduction) -> Vec<T>
where
    F: Fn(usize, [usize; 2]) -> T + Sync,
{
    let f = |(&o, &[x, y]): (&u32, &[u32; 2])| score(o as usize, [x as usize, y as usize]);
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        return owner.par_iter().zip(index.par_iter()).map(f).collect();
    }
    let _ = reduction;
    owner.iter().zip(index).map(f).collect()
}

/// DistMult scores of all relations for each `(head, tail)` query.
pub fn relation_scores<T: Real>(entities: &Matrix<T>, relations: &Matrix<T>, queries: &[(u32, u32)], reduction: Reduction) -> Matrix<T> {
    let nr = relations.rows();
    let mut out = Matrix::zeros(queries.len(), nr);
    let mut scratch_owned = vec![T::zero(); entities.dim()];
    let fill = |(row, &(h, t)): (&mut [T], &(u32, u32)), scratch: &mut [T]| {
        assert!((h as usize) < entities.rows() && (t as usize) < entities.rows(), "query entity id out of range");
        kernels::hadamard(entities.row(h as usize), entities.row(t as usize), scratch);
        for (j, o) in row.iter_mut().enumerate() {
            *o = kernels::dot(relations.row(j), scratch);
        }
    };
    if nr == 0 {
        return out;
    }
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        let dim = entities.dim();
        out.as_mut_slice()
            .par_chunks_mut(nr)
            .zip(queries.par_iter())
            .for_each_init(|| vec![T::zero(); dim], |scratch, item| fill(item, scratch));
        return out;
    }
    let _ = reduction;
    for item in out.as_mut_slice().chunks_mut(nr).zip(queries) {
        fill(item, &mut scratch_owned);
    }
    out
}

/// Gradients for both tables. `*_touched` flags the rows reached by the
/// backward pass; every other row has an exactly-zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub entities: Matrix<T>,
    pub relations: Matrix<T>,
    pub entity_touched: Vec<bool>,
    pub relation_touched: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub layers: usize,
    pub l2_lambda: f64,
    /// Drop the context pairs contributed by each batch triple itself.
    pub exclude_self: bool,
    pub neighbor_cap: Option<usize>,
    /// Seed for neighbor sampling; only used with `neighbor_cap`.
    pub sample_seed: u64,
    pub reduction: Reduction,
}

impl LossConfig {
    pub fn new(layers: usize, l2_lambda: f64) -> Self {
        Self {
            layers,
            l2_lambda,
            exclude_self: false,
            neighbor_cap: None,
            sample_seed: 0,
            reduction: Reduction::Strict,
        }
    }
}

/// Batch-mean softmax cross-entropy over relations plus an L2 penalty on the
/// touched rows, and its exact gradient with respect to both tables.
///
/// `triples` is the full triple table the context ids refer to; `batch`
/// lists ids into it. `batch_id` is only used to label errors.
pub fn loss_and_grad<T: Real>(
    state: &EmbeddingState<T>,
    triples: &[Triple],
    ctx: &ContextIndex,
    batch: &[TripleId],
    batch_id: usize,
    config: &LossConfig,
) -> Result<(T, Gradients<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch { batch: batch_id });
    }
    let mask = config.exclude_self.then(|| {
        let mut m = vec![false; triples.len()];
        for &id in batch {
            m[id as usize] = true;
        }
        m
    });
    let options = AggregateOptions {
        layers: config.layers,
        exclude: mask.as_deref(),
        neighbor_cap: config.neighbor_cap.map(|c| (c, config.sample_seed)),
        reduction: config.reduction,
    };
    let trace = aggregate(state, ctx, options);

    let ne = state.entities.rows();
    let nr = state.relations.rows();
    let dim = state.dim();
    let queries: Vec<Triple> = batch.iter().map(|&id| triples[id as usize]).collect();
    let pairs: Vec<(u32, u32)> = queries.iter().map(|t| (t.head, t.tail)).collect();
    let scores = trace.score_relations(&pairs);

    let inv_batch = T::one() / T::from_f64(queries.len() as f64);
    let ents = trace.final_entities();
    let rels = trace.final_relations();
    let mut grad_e = Matrix::zeros(ne, dim);
    let mut grad_r = Matrix::zeros(nr, dim);
    let mut active_e = vec![false; ne];
    let mut active_r = vec![false; nr];
    let mut total = T::zero();
    let mut coef = vec![T::zero(); nr];
    let mut scratch = vec![T::zero(); dim];
    for (q, tr) in queries.iter().enumerate() {
        let row = scores.row(q);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (c, &s) in coef.iter_mut().zip(row) {
            *c = (s - max).exp();
            z = z + *c;
        }
        total = total + (max + z.ln() - row[tr.rel as usize]);
        for c in coef.iter_mut() {
            *c = *c / z;
        }
        coef[tr.rel as usize] = coef[tr.rel as usize] - T::one();
        let (h, t) = (tr.head as usize, tr.tail as usize);
        kernels::hadamard(ents.row(h), ents.row(t), &mut scratch);
        for (j, &c) in coef.iter().enumerate() {
            let c = c * inv_batch;
            grad_e_add(&mut grad_e, h, c, rels.row(j), ents.row(t));
            grad_e_add(&mut grad_e, t, c, rels.row(j), ents.row(h));
            grad_r.add_scaled_row(j, c, &scratch);
            active_r[j] = true;
        }
        active_e[h] = true;
        active_e[t] = true;
    }
    let mut loss = total * inv_batch;

    for layer in (0..trace.num_layers()).rev() {
        let (ge, gr) = backward_layer(&trace, layer, &grad_e, &grad_r, &mut active_e, &mut active_r);
        grad_e = ge;
        grad_r = gr;
    }

    if config.l2_lambda != 0.0 {
        let lambda = T::from_f64(config.l2_lambda);
        let two_lambda = lambda + lambda;
        let mut penalty = T::zero();
        for (table, grad, active) in [
            (&state.entities, &mut grad_e, &active_e),
            (&state.relations, &mut grad_r, &active_r),
        ] {
            for (i, _) in active.iter().enumerate().filter(|(_, &a)| a) {
                let row = table.row(i);
                penalty = penalty + kernels::dot(row, row);
                grad.add_scaled_row(i, two_lambda, row);
            }
        }
        loss = loss + lambda * penalty;
    }

    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { batch: batch_id });
    }
    let grads = Gradients {
        entities: grad_e,
        relations: grad_r,
        entity_touched: active_e,
        relation_touched: active_r,
    };
    if !grads.is_finite() {
        return Err(ModelError::NonFiniteGradient { batch: batch_id });
    }
    Ok((loss, grads))
}

#[inline]
fn grad_e_add<T: Real>(grad: &mut Matrix<T>, row: usize, scale: T, a: &[T], b: &[T]) {
    kernels::hadamard_accumulate(scale, a, b, grad.row_mut(row));
}

/// Pulls gradients w.r.t. layer `layer + 1` activations back to layer `layer`.
/// Segments whose owner has not been reached carry a zero upstream and are skipped.
fn backward_layer<T: Real>(
    trace: &LayerTrace<'_, T>,
    layer: usize,
    up_e: &Matrix<T>,
    up_r: &Matrix<T>,
    active_e: &mut [bool],
    active_r: &mut [bool],
) -> (Matrix<T>, Matrix<T>) {
    let ents = trace.entity_act(layer);
    let rels = trace.relation_act(layer);
    let ctx = trace.context();
    let dim = ents.dim();
    let mut ge = up_e.clone();
    let mut gr = up_r.clone();
    let reached_e: Vec<bool> = active_e.to_vec();
    let reached_r: Vec<bool> = active_r.to_vec();
    let mut g_weight: Vec<T> = Vec::new();
    let mut g_logit: Vec<T> = Vec::new();
    let mut buf = vec![T::zero(); dim];

    let alpha = trace.alpha(layer);
    let offsets = ctx.entity_offsets();
    for (i, _) in reached_e.iter().enumerate().filter(|(_, &a)| a) {
        let range = offsets[i]..offsets[i + 1];
        if range.is_empty() {
            continue;
        }
        let g = up_e.row(i);
        let idx = &trace.entity_index[range.clone()];
        let w = &alpha[range];
        g_weight.clear();
        g_weight.extend(idx.iter().map(|&[j, k]| kernels::distmult_score(g, rels.row(j as usize), ents.row(k as usize))));
        g_logit.clear();
        g_logit.resize(idx.len(), T::zero());
        kernels::segment_softmax_backward(&[0, idx.len()], w, &g_weight, &mut g_logit, Reduction::Strict);
        let e_i = ents.row(i);
        for ((&[j, k], &a), &gs) in idx.iter().zip(w).zip(&g_logit) {
            let (j, k) = (j as usize, k as usize);
            let (r_j, e_k) = (rels.row(j), ents.row(k));
            // message R_j ⊙ E_k, weighted by α
            kernels::hadamard_accumulate(a, g, e_k, gr.row_mut(j));
            kernels::hadamard_accumulate(a, g, r_j, ge.row_mut(k));
            // logit <E_i, R_j, E_k>
            kernels::hadamard(r_j, e_k, &mut buf);
            ge.add_scaled_row(i, gs, &buf);
            kernels::hadamard_accumulate(gs, e_i, e_k, gr.row_mut(j));
            kernels::hadamard_accumulate(gs, e_i, r_j, ge.row_mut(k));
            active_e[k] = true;
            active_r[j] = true;
        }
    }

    let beta = trace.beta(layer);
    let offsets = ctx.relation_offsets();
    for (i, _) in reached_r.iter().enumerate().filter(|(_, &a)| a) {
        let range = offsets[i]..offsets[i + 1];
        if range.is_empty() {
            continue;
        }
        let g = up_r.row(i);
        let idx = &trace.relation_index[range.clone()];
        let w = &beta[range];
        g_weight.clear();
        g_weight.extend(idx.iter().map(|&[a, b]| kernels::distmult_score(g, ents.row(a as usize), ents.row(b as usize))));
        g_logit.clear();
        g_logit.resize(idx.len(), T::zero());
        kernels::segment_softmax_backward(&[0, idx.len()], w, &g_weight, &mut g_logit, Reduction::Strict);
        let r_i = rels.row(i);
        for ((&[a, b], &wt), &gt) in idx.iter().zip(w).zip(&g_logit) {
            let (a, b) = (a as usize, b as usize);
            let (e_a, e_b) = (ents.row(a), ents.row(b));
            // message E_a ⊙ E_b, weighted by β
            kernels::hadamard_accumulate(wt, g, e_b, ge.row_mut(a));
            kernels::hadamard_accumulate(wt, g, e_a, ge.row_mut(b));
            // logit <E_a, R_i, E_b>
            kernels::hadamard_accumulate(gt, r_i, e_b, ge.row_mut(a));
            kernels::hadamard(e_a, e_b, &mut buf);
            gr.add_scaled_row(i, gt, &buf);
            kernels::hadamard_accumulate(gt, e_a, r_i, ge.row_mut(b));
            active_e[a] = true;
            active_e[b] = true;
        }
    }
    (ge, gr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextOptions;
    use crate::kg::{KgBuilder, KnowledgeGraph, Split};

    fn toy() -> (KnowledgeGraph, ContextIndex) {
        let mut b = KgBuilder::new();
        b.add_split_text(Split::Train, "A\tr1\tB\nB\tr2\tC\nA\tr1\tC\n").unwrap();
        b.add_split_text(Split::Valid, "D\tr2\tA\n").unwrap();
        let kg = b.finish().unwrap();
        let ctx = ContextIndex::build(&kg, ContextOptions::default());
        (kg, ctx)
    }

    #[test]
    fn zero_layers_is_identity() {
        let (kg, ctx) = toy();
        let state = EmbeddingState::<f64>::init(kg.num_entities(), kg.num_relations(), 3, 1);
        let trace = aggregate(&state, &ctx, AggregateOptions::layers(0));
        assert_eq!(trace.num_layers(), 0);
        assert_eq!(trace.final_entities(), &state.entities);
        assert_eq!(trace.final_relations(), &state.relations);
    }

    #[test]
    fn isolated_entity_unchanged() {
        let (kg, ctx) = toy();
        let d = kg.entities().id("D").unwrap() as usize;
        let state = EmbeddingState::<f64>::init(kg.num_entities(), kg.num_relations(), 3, 1);
        let trace = aggregate(&state, &ctx, AggregateOptions::layers(3));
        for l in 0..=3 {
            assert_eq!(trace.entity_act(l).row(d), state.entities.row(d));
        }
    }

    #[test]
    fn singleton_context_gets_full_weight() {
        let mut b = KgBuilder::new();
        b.add_split_text(Split::Train, "A\tr\tB\nB\tq\tC\n").unwrap();
        let kg = b.finish().unwrap();
        let ctx = ContextIndex::build(&kg, ContextOptions::default());
        let state = EmbeddingState::<f64>::init(3, 2, 4, 9);
        let trace = aggregate(&state, &ctx, AggregateOptions::layers(1));
        assert_eq!(trace.alpha(0)[0], 1.0);
        let mut expected = [0.0; 4];
        kernels::hadamard(state.relations.row(0), state.entities.row(1), &mut expected);
        for (m, x) in expected.iter_mut().enumerate() {
            *x += state.entities.row(0)[m];
        }
        assert_eq!(trace.entity_act(1).row(0), &expected);
    }

    #[test]
    fn attention_segments_sum_to_one() {
        let (kg, ctx) = toy();
        let state = EmbeddingState::<f64>::init(kg.num_entities(), kg.num_relations(), 5, 4);
        let trace = aggregate(&state, &ctx, AggregateOptions::layers(2));
        for l in 0..2 {
            for (offsets, w) in [(ctx.entity_offsets(), trace.alpha(l)), (ctx.relation_offsets(), trace.beta(l))] {
                for s in offsets.windows(2).filter(|s| s[1] > s[0]) {
                    let sum: f64 = w[s[0]..s[1]].iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scores_by_hand_and_symmetry() {
        let ents = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let rels = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.5, -1.0]);
        let s = relation_scores(&ents, &rels, &[(0, 1), (1, 0)], Reduction::Strict);
        assert_eq!(s.row(0), &[11.0, 1.5 - 8.0]);
        assert_eq!(s.row(0), s.row(1));
    }

    #[test]
    fn single_relation_loss_is_l2_only() {
        let mut b = KgBuilder::new();
        b.add_split_text(Split::Train, "A\tr\tB\nB\tr\tC\n").unwrap();
        let kg = b.finish().unwrap();
        let ctx = ContextIndex::build(&kg, ContextOptions::default());
        let state = EmbeddingState::<f64>::init(3, 1, 4, 2);
        let cfg = LossConfig::new(1, 0.0);
        let (loss, grads) = loss_and_grad(&state, kg.triples(), &ctx, &[0, 1], 0, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.relations.as_slice().iter().all(|&g| g == 0.0));

        let cfg = LossConfig::new(1, 1e-3);
        let (loss, _) = loss_and_grad(&state, kg.triples(), &ctx, &[0, 1], 0, &cfg).unwrap();
        let norm: f64 = state.entities.as_slice().iter().chain(state.relations.as_slice()).map(|x| x * x).sum();
        assert!((loss - 1e-3 * norm).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_r() {
        let mut b = KgBuilder::new();
        b.add_split_text(Split::Train, "A\tr0\tB\nA\tr1\tC\nB\tr2\tC\nC\tr3\tA\n").unwrap();
        let kg = b.finish().unwrap();
        let ctx = ContextIndex::build(&kg, ContextOptions::default());
        let mut state = EmbeddingState::<f64>::init(3, 4, 2, 2);
        state.relations.fill_zero();
        let cfg = LossConfig::new(0, 0.0);
        let (loss, _) = loss_and_grad(&state, kg.triples(), &ctx, &[0, 1, 2, 3], 0, &cfg).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_and_non_finite_are_errors() {
        let (kg, ctx) = toy();
        let mut state = EmbeddingState::<f64>::init(kg.num_entities(), kg.num_relations(), 2, 2);
        let cfg = LossConfig::new(1, 0.0);
        assert_eq!(
            loss_and_grad(&state, kg.triples(), &ctx, &[], 4, &cfg).unwrap_err(),
            ModelError::EmptyBatch { batch: 4 }
        );
        state.entities.row_mut(0)[0] = f64::NAN;
        assert_eq!(
            loss_and_grad(&state, kg.triples(), &ctx, &[0], 7, &cfg).unwrap_err(),
            ModelError::NonFiniteLoss { batch: 7 }
        );
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let (kg, ctx) = toy();
        let state = EmbeddingState::<f64>::init(kg.num_entities(), kg.num_relations(), 3, 5);
        let cfg = LossConfig::new(2, 1e-4);
        let (_, g) = loss_and_grad(&state, kg.triples(), &ctx, &[1], 0, &cfg).unwrap();
        let d = kg.entities().id("D").unwrap() as usize;
        assert!(!g.entity_touched[d]);
        assert!(g.entities.row_is_zero(d));
    }
}
