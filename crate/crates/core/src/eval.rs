//! Relation-prediction ranking: each `(h, r, t)` query ranks the true `r`
//! among all relations scored for the pair `(h, t)`.
//!
//! Ties are resolved with the mean policy: the true relation gets the average
//! of its best- and worst-case positions among equally scored candidates.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::context::ContextIndex;
use crate::kernels::Reduction;
use crate::kg::{KnowledgeGraph, Split, Triple};
use crate::model::{aggregate, AggregateOptions, EmbeddingState, LayerTrace};
use crate::real::Real;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalMode {
    #[default]
    Raw,
    /// Other relations known to hold for the same `(h, t)` in any split are
    /// removed from the candidates.
    Filtered,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Raw => "raw",
            EvalMode::Filtered => "filtered",
        }
    }
}

/// Relations observed for each ordered `(head, tail)` pair.
#[derive(Clone, Debug, Default)]
pub struct KnownRelations {
    by_pair: BTreeMap<(u32, u32), Vec<u32>>,
}

impl KnownRelations {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut by_pair: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        for t in triples {
            let rels = by_pair.entry((t.head, t.tail)).or_default();
            if !rels.contains(&t.rel) {
                rels.push(t.rel);
            }
        }
        Self { by_pair }
    }

    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        Self::from_triples(kg.triples())
    }

    pub fn relations(&self, head: u32, tail: u32) -> &[u32] {
        self.by_pair.get(&(head, tail)).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Mean-tie rank of `scores[true_rel]` among candidates not flagged by `skip`.
/// The true relation itself is never skipped.
pub fn rank_of_true<T: Real>(scores: &[T], true_rel: usize, skip: impl Fn(usize) -> bool) -> f64 {
    assert!(true_rel < scores.len(), "true relation id out of range");
    let target = scores[true_rel];
    let (mut higher, mut ties) = (0usize, 0usize);
    for (j, &s) in scores.iter().enumerate() {
        if j == true_rel || skip(j) {
            continue;
        }
        if s > target {
            higher += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1.0 + higher as f64 + ties as f64 / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hit3: f64,
    pub count: usize,
}

/// MRR, MR and Hit@3 of a nonempty set of ranks.
pub fn compute_metrics(ranks: &[f64]) -> Metrics {
    assert!(!ranks.is_empty(), "metrics need at least one rank");
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
    let mr = ranks.iter().sum::<f64>() / n;
    Metrics {
        mrr,
        mr,
        hit3: hits_at(ranks, 3.0),
        count: ranks.len(),
    }
}

/// Fraction of ranks `<= k`.
pub fn hits_at(ranks: &[f64], k: f64) -> f64 {
    assert!(!ranks.is_empty(), "metrics need at least one rank");
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryRank {
    pub head: u32,
    pub tail: u32,
    pub rel: u32,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub queries: Vec<QueryRank>,
    pub metrics: Metrics,
    pub mode: EvalMode,
}

impl RankingReport {
    pub fn ranks(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.rank).collect()
    }

    pub fn hits_at(&self, k: f64) -> f64 {
        hits_at(&self.ranks(), k)
    }
}

/// Ranks every query against the final layer of `trace`.
pub fn rank_queries<T: Real>(trace: &LayerTrace<'_, T>, queries: &[Triple], mode: EvalMode, known: &KnownRelations, reduction: Reduction) -> RankingReport {
    assert!(!queries.is_empty(), "no queries to rank");
    let nr = trace.final_relations().rows();
    let rank_one = |q: &Triple| {
        assert!((q.rel as usize) < nr, "query relation id out of range");
        let scores = trace.score_relations(&[(q.head, q.tail)]);
        let rank = match mode {
            EvalMode::Raw => rank_of_true(scores.row(0), q.rel as usize, |_| false),
            EvalMode::Filtered => {
                let other = known.relations(q.head, q.tail);
                rank_of_true(scores.row(0), q.rel as usize, |j| other.contains(&(j as u32)))
            }
        };
        QueryRank {
            head: q.head,
            tail: q.tail,
            rel: q.rel,
            rank,
        }
    };
    #[cfg(feature = "parallel")]
    let ranked: Vec<QueryRank> = if reduction.is_parallel() {
        queries.par_iter().map(rank_one).collect()
    } else {
        queries.iter().map(rank_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let ranked: Vec<QueryRank> = {
        let _ = reduction;
        queries.iter().map(rank_one).collect()
    };
    let ranks: Vec<f64> = ranked.iter().map(|q| q.rank).collect();
    RankingReport {
        metrics: compute_metrics(&ranks),
        queries: ranked,
        mode,
    }
}

/// Aggregates once over `ctx` and ranks every triple of `split`.
/// Returns `None` when the split is empty.
pub fn evaluate_split<T: Real>(
    state: &EmbeddingState<T>,
    kg: &KnowledgeGraph,
    ctx: &ContextIndex,
    split: Split,
    layers: usize,
    mode: EvalMode,
    reduction: Reduction,
) -> Option<RankingReport> {
    let queries: Vec<Triple> = kg.split_ids(split).into_iter().map(|id| kg.triple(id)).collect();
    if queries.is_empty() {
        return None;
    }
    let trace = aggregate(
        state,
        ctx,
        AggregateOptions {
            layers,
            reduction,
            ..AggregateOptions::default()
        },
    );
    let known = KnownRelations::from_graph(kg);
    Some(rank_queries(&trace, &queries, mode, &known, reduction))
}
