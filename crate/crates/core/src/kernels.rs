//! Dense-vector and CSR-segment primitives with their reverse-mode rules.
//!
//! Segments are described by CSR offsets: segment `s` covers the flat range
//! `offsets[s]..offsets[s + 1]`. Empty segments are legal; their softmax is
//! empty and their weighted sum is the zero vector.
//!
//! Shape mismatches are contract violations and panic.
//!
//! Reductions inside a segment are always performed left to right. With the
//! `parallel` feature, [`Reduction::Parallel`] distributes whole segments
//! across threads, which leaves every individual sum unchanged, so both modes
//! produce bitwise-identical output.

use alloc::vec::Vec;

use crate::real::{Matrix, Real};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How segment loops are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Single-threaded, fixed order.
    #[default]
    Strict,
    /// Segments are spread across the rayon pool when the `parallel`
    /// feature is enabled; identical to `Strict` otherwise.
    Parallel,
}

impl Reduction {
    #[inline]
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Reduction::Parallel
    }
}

#[inline]
fn check_len(a: usize, b: usize) {
    assert_eq!(a, b, "vector length mismatch");
}

/// `out[m] = a[m] * b[m]`
pub fn hadamard<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    check_len(a.len(), b.len());
    check_len(a.len(), out.len());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}

/// `out[m] += scale * a[m] * b[m]`
#[inline]
pub fn hadamard_accumulate<T: Real>(scale: T, a: &[T], b: &[T], out: &mut [T]) {
    check_len(a.len(), b.len());
    check_len(a.len(), out.len());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = *o + scale * x * y;
    }
}

/// Gradients of `a ⊙ b` for upstream `g`: `(g ⊙ b, g ⊙ a)`.
pub fn hadamard_backward<T: Real>(g: &[T], a: &[T], b: &[T], grad_a: &mut [T], grad_b: &mut [T]) {
    hadamard(g, b, grad_a);
    hadamard(g, a, grad_b);
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    check_len(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// DistMult triple score `Σ_m e_i[m]·r[m]·e_k[m]`.
///
/// Evaluated as `r·(e_i·e_k)` so swapping the two entities is bitwise symmetric.
#[inline]
pub fn distmult_score<T: Real>(head: &[T], rel: &[T], tail: &[T]) -> T {
    check_len(head.len(), rel.len());
    check_len(head.len(), tail.len());
    head.iter()
        .zip(rel)
        .zip(tail)
        .fold(T::zero(), |acc, ((&h, &r), &t)| acc + r * (h * t))
}

/// Gradients of the DistMult score scaled by the upstream scalar `g`.
pub fn distmult_backward<T: Real>(
    g: T,
    head: &[T],
    rel: &[T],
    tail: &[T],
    grad_head: &mut [T],
    grad_rel: &mut [T],
    grad_tail: &mut [T],
) {
    grad_head.iter_mut().for_each(|x| *x = T::zero());
    grad_rel.iter_mut().for_each(|x| *x = T::zero());
    grad_tail.iter_mut().for_each(|x| *x = T::zero());
    hadamard_accumulate(g, rel, tail, grad_head);
    hadamard_accumulate(g, head, tail, grad_rel);
    hadamard_accumulate(g, head, rel, grad_tail);
}

fn check_offsets(offsets: &[usize], len: usize) {
    assert!(!offsets.is_empty(), "offsets must hold at least one entry");
    assert_eq!(offsets[offsets.len() - 1], len, "final offset must equal the value count");
}

/// Splits `data` into per-segment mutable slices.
fn split_segments<'a, T>(mut data: &'a mut [T], offsets: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(offsets.len().saturating_sub(1));
    for w in offsets.windows(2) {
        let (head, rest) = core::mem::take(&mut data).split_at_mut(w[1] - w[0]);
        out.push(head);
        data = rest;
    }
    out
}

fn softmax_segment<T: Real>(x: &[T], y: &mut [T]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in y.iter_mut().zip(x) {
        *o = (v - max).exp();
        total = total + *o;
    }
    for o in y.iter_mut() {
        *o = *o / total;
    }
}

/// Max-shifted softmax within each segment.
pub fn segment_softmax<T: Real>(offsets: &[usize], logits: &[T], out: &mut [T], reduction: Reduction) {
    check_offsets(offsets, logits.len());
    check_len(logits.len(), out.len());
    let segs = split_segments(out, offsets);
    let run = |(s, y): (usize, &mut [T])| softmax_segment(&logits[offsets[s]..offsets[s + 1]], y);
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        segs.into_par_iter().enumerate().for_each(run);
        return;
    }
    let _ = reduction;
    segs.into_iter().enumerate().for_each(run);
}

fn softmax_backward_segment<T: Real>(y: &[T], g: &[T], out: &mut [T]) {
    let inner = y.iter().zip(g).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    for ((o, &yp), &gp) in out.iter_mut().zip(y).zip(g) {
        *o = yp * (gp - inner);
    }
}

/// `dL/dx_p = y_p·(g_p − Σ_q y_q g_q)` per segment, given the softmax output `y`.
pub fn segment_softmax_backward<T: Real>(offsets: &[usize], probs: &[T], upstream: &[T], out: &mut [T], reduction: Reduction) {
    check_offsets(offsets, probs.len());
    check_len(probs.len(), upstream.len());
    check_len(probs.len(), out.len());
    let segs = split_segments(out, offsets);
    let run = |(s, o): (usize, &mut [T])| {
        let r = offsets[s]..offsets[s + 1];
        softmax_backward_segment(&probs[r.clone()], &upstream[r], o)
    };
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        segs.into_par_iter().enumerate().for_each(run);
        return;
    }
    let _ = reduction;
    segs.into_iter().enumerate().for_each(run);
}

/// A per-pair message vector source for [`segment_weighted_sum`].
pub trait Messages<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// `out += scale * message[p]`
    fn accumulate(&self, p: usize, scale: T, out: &mut [T]);
    /// `<message[p], v>`
    fn dot(&self, p: usize, v: &[T]) -> T;
}

/// Messages stored as a flat `len × dim` array.
#[derive(Clone, Copy, Debug)]
pub struct DenseMessages<'a, T> {
    pub dim: usize,
    pub values: &'a [T],
}

impl<T: Real> Messages<T> for DenseMessages<'_, T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    fn accumulate(&self, p: usize, scale: T, out: &mut [T]) {
        let m = &self.values[p * self.dim..(p + 1) * self.dim];
        for (o, &x) in out.iter_mut().zip(m) {
            *o = *o + scale * x;
        }
    }
    fn dot(&self, p: usize, v: &[T]) -> T {
        dot(&self.values[p * self.dim..(p + 1) * self.dim], v)
    }
}

/// Messages `left[a_p] ⊙ right[b_p]` computed on the fly from two tables.
#[derive(Clone, Copy, Debug)]
pub struct HadamardMessages<'a, T> {
    pub left: &'a Matrix<T>,
    pub right: &'a Matrix<T>,
    pub index: &'a [[u32; 2]],
}

impl<T: Real> Messages<T> for HadamardMessages<'_, T> {
    fn dim(&self) -> usize {
        self.left.dim()
    }
    fn len(&self) -> usize {
        self.index.len()
    }
    #[inline]
    fn accumulate(&self, p: usize, scale: T, out: &mut [T]) {
        let [a, b] = self.index[p];
        hadamard_accumulate(scale, self.left.row(a as usize), self.right.row(b as usize), out);
    }
    #[inline]
    fn dot(&self, p: usize, v: &[T]) -> T {
        let [a, b] = self.index[p];
        distmult_score(self.left.row(a as usize), self.right.row(b as usize), v)
    }
}

/// `out[s] = Σ_{p ∈ s} weights[p]·messages[p]`; `out` is `num_segments × dim`.
pub fn segment_weighted_sum<T: Real, M: Messages<T>>(
    offsets: &[usize],
    weights: &[T],
    messages: &M,
    out: &mut [T],
    reduction: Reduction,
) {
    check_offsets(offsets, weights.len());
    check_len(weights.len(), messages.len());
    let dim = messages.dim();
    check_len(out.len(), (offsets.len() - 1) * dim);
    let run = |(s, row): (usize, &mut [T])| {
        row.iter_mut().for_each(|x| *x = T::zero());
        for (p, &w) in weights.iter().enumerate().take(offsets[s + 1]).skip(offsets[s]) {
            messages.accumulate(p, w, row);
        }
    };
    if dim == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        out.par_chunks_mut(dim).enumerate().for_each(run);
        return;
    }
    let _ = reduction;
    out.chunks_mut(dim).enumerate().for_each(run);
}

/// Weight gradients of [`segment_weighted_sum`]: `grad_weights[p] = <upstream[s], messages[p]>`.
pub fn segment_weighted_sum_backward_weights<T: Real, M: Messages<T>>(
    offsets: &[usize],
    messages: &M,
    upstream: &[T],
    grad_weights: &mut [T],
    reduction: Reduction,
) {
    check_offsets(offsets, grad_weights.len());
    check_len(grad_weights.len(), messages.len());
    let dim = messages.dim();
    check_len(upstream.len(), (offsets.len() - 1) * dim);
    let segs = split_segments(grad_weights, offsets);
    let run = |(s, gw): (usize, &mut [T])| {
        let g = &upstream[s * dim..(s + 1) * dim];
        for (i, w) in gw.iter_mut().enumerate() {
            *w = messages.dot(offsets[s] + i, g);
        }
    };
    #[cfg(feature = "parallel")]
    if reduction.is_parallel() {
        segs.into_par_iter().enumerate().for_each(run);
        return;
    }
    let _ = reduction;
    segs.into_iter().enumerate().for_each(run);
}

/// Full backward of [`segment_weighted_sum`] over dense messages:
/// weight gradients and `grad_messages[p] = weights[p]·upstream[s]`.
pub fn segment_weighted_sum_backward<T: Real>(
    offsets: &[usize],
    weights: &[T],
    messages: &DenseMessages<'_, T>,
    upstream: &[T],
    grad_weights: &mut [T],
    grad_messages: &mut [T],
    reduction: Reduction,
) {
    segment_weighted_sum_backward_weights(offsets, messages, upstream, grad_weights, reduction);
    let dim = messages.dim;
    check_len(grad_messages.len(), messages.values.len());
    for s in 0..offsets.len() - 1 {
        let g = &upstream[s * dim..(s + 1) * dim];
        for p in offsets[s]..offsets[s + 1] {
            for (o, &x) in grad_messages[p * dim..(p + 1) * dim].iter_mut().zip(g) {
                *o = weights[p] * x;
            }
        }
    }
}
