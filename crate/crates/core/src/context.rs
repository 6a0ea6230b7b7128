//! CSR indices over entity contexts and relation contexts.
//!
//! For a triple `(h, r, t)`:
//! - `h`'s entity context gets the pair `(r, t)` and `t`'s gets `(r, h)`;
//!   a self-loop `(a, r, a)` contributes the single pair `(r, a)`;
//! - `r`'s relation context gets the pair `(h, t)`.
//!
//! Within a segment, pairs are ordered by the id of the triple they come from.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::kg::{KnowledgeGraph, Split, TripleId};

/// Which side of the source triple the segment's own entity sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// The segment entity is the head; the neighbor is the tail.
    Outgoing,
    /// The segment entity is the tail; the neighbor is the head.
    Incoming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EntityContextPair {
    pub rel: u32,
    pub entity: u32,
    pub source: TripleId,
    /// Recorded for inspection; the aggregation itself treats both directions alike.
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelationContextPair {
    pub head: u32,
    pub tail: u32,
    pub source: TripleId,
}

/// Which splits feed the contexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitFilter {
    pub train: bool,
    pub valid: bool,
    pub test: bool,
}

impl SplitFilter {
    pub const TRAIN_ONLY: Self = Self {
        train: true,
        valid: false,
        test: false,
    };
    pub const TRAIN_VALID: Self = Self {
        train: true,
        valid: true,
        test: false,
    };

    pub fn includes(&self, split: Split) -> bool {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

impl Default for SplitFilter {
    fn default() -> Self {
        Self::TRAIN_ONLY
    }
}

/// Options for [`ContextIndex::build`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ContextOptions {
    pub splits: SplitFilter,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextIndex {
    entity_offsets: Vec<usize>,
    entity_pairs: Vec<EntityContextPair>,
    relation_offsets: Vec<usize>,
    relation_pairs: Vec<RelationContextPair>,
}

impl ContextIndex {
    pub fn build(kg: &KnowledgeGraph, options: ContextOptions) -> Self {
        let ne = kg.num_entities();
        let nr = kg.num_relations();
        let selected: Vec<TripleId> = (0..kg.triples().len() as TripleId)
            .filter(|&id| options.splits.includes(kg.split_of(id)))
            .collect();

        let mut entity_deg = vec![0usize; ne];
        let mut relation_deg = vec![0usize; nr];
        for &id in &selected {
            let t = kg.triple(id);
            entity_deg[t.head as usize] += 1;
            if !t.is_self_loop() {
                entity_deg[t.tail as usize] += 1;
            }
            relation_deg[t.rel as usize] += 1;
        }
        let entity_offsets = prefix_offsets(&entity_deg);
        let relation_offsets = prefix_offsets(&relation_deg);

        let placeholder_e = EntityContextPair {
            rel: 0,
            entity: 0,
            source: 0,
            direction: Direction::Outgoing,
        };
        let placeholder_r = RelationContextPair {
            head: 0,
            tail: 0,
            source: 0,
        };
        let mut entity_pairs = vec![placeholder_e; *entity_offsets.last().unwrap()];
        let mut relation_pairs = vec![placeholder_r; *relation_offsets.last().unwrap()];
        let mut entity_cursor = entity_offsets[..ne].to_vec();
        let mut relation_cursor = relation_offsets[..nr].to_vec();

        // Triple ids are visited in ascending order, so each segment ends up sorted by source.
        for &id in &selected {
            let t = kg.triple(id);
            let h = t.head as usize;
            entity_pairs[entity_cursor[h]] = EntityContextPair {
                rel: t.rel,
                entity: t.tail,
                source: id,
                direction: Direction::Outgoing,
            };
            entity_cursor[h] += 1;
            if !t.is_self_loop() {
                let tl = t.tail as usize;
                entity_pairs[entity_cursor[tl]] = EntityContextPair {
                    rel: t.rel,
                    entity: t.head,
                    source: id,
                    direction: Direction::Incoming,
                };
                entity_cursor[tl] += 1;
            }
            let r = t.rel as usize;
            relation_pairs[relation_cursor[r]] = RelationContextPair {
                head: t.head,
                tail: t.tail,
                source: id,
            };
            relation_cursor[r] += 1;
        }

        Self {
            entity_offsets,
            entity_pairs,
            relation_offsets,
            relation_pairs,
        }
    }

    /// Assembles an index from raw CSR arrays, validating the offsets.
    pub fn from_parts(
        entity_offsets: Vec<usize>,
        entity_pairs: Vec<EntityContextPair>,
        relation_offsets: Vec<usize>,
        relation_pairs: Vec<RelationContextPair>,
    ) -> Option<Self> {
        let valid = |offsets: &[usize], len: usize| {
            !offsets.is_empty() && offsets[0] == 0 && offsets.windows(2).all(|w| w[0] <= w[1]) && offsets[offsets.len() - 1] == len
        };
        if !valid(&entity_offsets, entity_pairs.len()) || !valid(&relation_offsets, relation_pairs.len()) {
            return None;
        }
        Some(Self {
            entity_offsets,
            entity_pairs,
            relation_offsets,
            relation_pairs,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_offsets.len() - 1
    }

    pub fn num_relations(&self) -> usize {
        self.relation_offsets.len() - 1
    }

    pub fn entity_offsets(&self) -> &[usize] {
        &self.entity_offsets
    }

    pub fn entity_pairs(&self) -> &[EntityContextPair] {
        &self.entity_pairs
    }

    pub fn relation_offsets(&self) -> &[usize] {
        &self.relation_offsets
    }

    pub fn relation_pairs(&self) -> &[RelationContextPair] {
        &self.relation_pairs
    }

    pub fn entity_context(&self, entity: u32) -> &[EntityContextPair] {
        let e = entity as usize;
        &self.entity_pairs[self.entity_offsets[e]..self.entity_offsets[e + 1]]
    }

    pub fn relation_context(&self, rel: u32) -> &[RelationContextPair] {
        let r = rel as usize;
        &self.relation_pairs[self.relation_offsets[r]..self.relation_offsets[r + 1]]
    }

    /// Copy of the index keeping only the pairs accepted by the predicates
    /// (called with the global pair index).
    pub fn retain(
        &self,
        mut keep_entity: impl FnMut(usize, &EntityContextPair) -> bool,
        mut keep_relation: impl FnMut(usize, &RelationContextPair) -> bool,
    ) -> Self {
        let (entity_offsets, entity_pairs) = compact(&self.entity_offsets, &self.entity_pairs, &mut keep_entity);
        let (relation_offsets, relation_pairs) = compact(&self.relation_offsets, &self.relation_pairs, &mut keep_relation);
        Self {
            entity_offsets,
            entity_pairs,
            relation_offsets,
            relation_pairs,
        }
    }

    /// Drops every pair whose source triple is flagged in `excluded`.
    pub fn without_sources(&self, excluded: &[bool]) -> Self {
        let hit = |s: TripleId| excluded.get(s as usize).copied().unwrap_or(false);
        self.retain(|_, p| !hit(p.source), |_, p| !hit(p.source))
    }

    /// Keeps at most `cap` pairs per segment, chosen uniformly without
    /// replacement; kept pairs retain their original order.
    pub fn capped<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> Self {
        let entity_keep = cap_mask(&self.entity_offsets, cap, rng);
        let relation_keep = cap_mask(&self.relation_offsets, cap, rng);
        self.retain(|i, _| entity_keep[i], |i, _| relation_keep[i])
    }
}

fn prefix_offsets(degrees: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(degrees.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &d in degrees {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

fn compact<P: Copy>(offsets: &[usize], pairs: &[P], keep: &mut impl FnMut(usize, &P) -> bool) -> (Vec<usize>, Vec<P>) {
    let mut new_offsets = Vec::with_capacity(offsets.len());
    let mut new_pairs = Vec::with_capacity(pairs.len());
    new_offsets.push(0);
    for w in offsets.windows(2) {
        for (i, p) in pairs.iter().enumerate().take(w[1]).skip(w[0]) {
            if keep(i, p) {
                new_pairs.push(*p);
            }
        }
        new_offsets.push(new_pairs.len());
    }
    (new_offsets, new_pairs)
}

fn cap_mask<R: Rng + ?Sized>(offsets: &[usize], cap: usize, rng: &mut R) -> Vec<bool> {
    let total = *offsets.last().unwrap_or(&0);
    let mut keep = vec![true; total];
    for w in offsets.windows(2) {
        let len = w[1] - w[0];
        if len > cap {
            keep[w[0]..w[1]].iter_mut().for_each(|k| *k = false);
            for i in index::sample(rng, len, cap).iter() {
                keep[w[0] + i] = true;
            }
        }
    }
    keep
}
