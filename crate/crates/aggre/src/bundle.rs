//! Preprocessed graph bundle: vocabularies, encoded triples, split tags and
//! the context index in one binary file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AGGREKG" version:u8
//! entities:u32  { len:u32 utf8 }*   relations:u32  { len:u32 utf8 }*
//! triples:u32   { head:u32 rel:u32 tail:u32 split:u8 }*
//! duplicates:u64 cross_split_dropped:u64
//! context splits:u8 (bit 0 train, bit 1 valid, bit 2 test)
//! entity pairs:u32    offsets:u32 x (|E|+1)  { rel:u32 entity:u32 source:u32 dir:u8 }*
//! relation pairs:u32  offsets:u32 x (|R|+1)  { head:u32 tail:u32 source:u32 }*
//! ```

use std::fs;
use std::path::Path;

use aggre_core::{
    ContextIndex, ContextOptions, Direction, EntityContextPair, KnowledgeGraph, RelationContextPair, Split, SplitFilter, Triple,
    Vocab,
};

use crate::error::{AppError, Result};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 7] = b"AGGREKG";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub graph: KnowledgeGraph,
    pub context_splits: SplitFilter,
    pub context: ContextIndex,
}

impl Bundle {
    pub fn build(graph: KnowledgeGraph, context_splits: SplitFilter) -> Self {
        let context = ContextIndex::build(&graph, ContextOptions { splits: context_splits });
        Self {
            graph,
            context_splits,
            context,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let kg = &self.graph;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(VERSION);
        for vocab in [kg.entities(), kg.relations()] {
            w.u32(vocab.len() as u32);
            for label in vocab.labels() {
                w.str(label);
            }
        }
        w.u32(kg.triples().len() as u32);
        for (t, s) in kg.triples().iter().zip(kg.split_tags()) {
            w.u32(t.head);
            w.u32(t.rel);
            w.u32(t.tail);
            w.u8(s.as_u8());
        }
        w.u64(kg.duplicates() as u64);
        w.u64(kg.cross_split_dropped() as u64);
        w.u8(filter_bits(self.context_splits));

        let ctx = &self.context;
        w.u32(ctx.entity_pairs().len() as u32);
        for &o in ctx.entity_offsets() {
            w.u32(o as u32);
        }
        for p in ctx.entity_pairs() {
            w.u32(p.rel);
            w.u32(p.entity);
            w.u32(p.source);
            w.u8(matches!(p.direction, Direction::Incoming) as u8);
        }
        w.u32(ctx.relation_pairs().len() as u32);
        for &o in ctx.relation_offsets() {
            w.u32(o as u32);
        }
        for p in ctx.relation_pairs() {
            w.u32(p.head);
            w.u32(p.tail);
            w.u32(p.source);
        }
        w.buf
    }

    pub fn decode(data: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(data);
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err("bad magic, not a graph bundle".into());
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(format!("unsupported bundle version {version}"));
        }
        let mut vocab = || -> Result<Vocab, String> {
            let n = r.u32()? as usize;
            let labels = (0..n).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
            Vocab::from_labels(labels).map_err(|e| e.to_string())
        };
        let entities = vocab()?;
        let relations = vocab()?;
        let n = r.u32()? as usize;
        let mut triples = Vec::with_capacity(n.min(data.len()));
        let mut splits = Vec::with_capacity(n.min(data.len()));
        for _ in 0..n {
            triples.push(Triple::new(r.u32()?, r.u32()?, r.u32()?));
            splits.push(Split::from_u8(r.u8()?).ok_or("bad split tag")?);
        }
        let duplicates = r.u64()? as usize;
        let dropped = r.u64()? as usize;
        let context_splits = filter_from_bits(r.u8()?)?;
        let (ne, nr) = (entities.len(), relations.len());

        let n = r.u32()? as usize;
        let entity_offsets = offsets(&mut r, ne + 1)?;
        let mut entity_pairs = Vec::with_capacity(n.min(data.len()));
        for _ in 0..n {
            let (rel, entity, source) = (r.u32()?, r.u32()?, r.u32()?);
            let direction = match r.u8()? {
                0 => Direction::Outgoing,
                1 => Direction::Incoming,
                d => return Err(format!("bad direction tag {d}")),
            };
            entity_pairs.push(EntityContextPair {
                rel,
                entity,
                source,
                direction,
            });
        }
        let n = r.u32()? as usize;
        let relation_offsets = offsets(&mut r, nr + 1)?;
        let mut relation_pairs = Vec::with_capacity(n.min(data.len()));
        for _ in 0..n {
            relation_pairs.push(RelationContextPair {
                head: r.u32()?,
                tail: r.u32()?,
                source: r.u32()?,
            });
        }
        r.finish()?;

        let graph = KnowledgeGraph::from_parts(entities, relations, triples, splits)
            .map_err(|e| e.to_string())?
            .with_load_counts(duplicates, dropped);
        let context = ContextIndex::from_parts(entity_offsets, entity_pairs, relation_offsets, relation_pairs)
            .ok_or("inconsistent context offsets")?;
        if context != ContextIndex::build(&graph, ContextOptions { splits: context_splits }) {
            return Err("stored context does not match the stored triples".into());
        }
        Ok(Self {
            graph,
            context_splits,
            context,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| AppError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::decode(&data).map_err(|m| AppError::format(path, m))
    }
}

fn offsets(r: &mut Reader<'_>, count: usize) -> Result<Vec<usize>, String> {
    (0..count).map(|_| r.u32().map(|v| v as usize)).collect()
}

fn filter_bits(f: SplitFilter) -> u8 {
    f.train as u8 | (f.valid as u8) << 1 | (f.test as u8) << 2
}

fn filter_from_bits(b: u8) -> Result<SplitFilter, String> {
    if b > 7 {
        return Err(format!("bad context split mask {b}"));
    }
    Ok(SplitFilter {
        train: b & 1 != 0,
        valid: b & 2 != 0,
        test: b & 4 != 0,
    })
}
