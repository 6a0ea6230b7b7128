//! Integer-encoded triple store with label vocabularies and split tags.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Index into [`KnowledgeGraph::triples`].
pub type TripleId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: u32,
    pub rel: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, rel: u32, tail: u32) -> Self {
        Self { head, rel, tail }
    }

    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Valid),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("{split} line {line}: expected 3 tab-separated fields, found {found}")]
    Parse { split: Split, line: usize, found: usize },
    #[error("{split} line {line}: empty field")]
    EmptyField { split: Split, line: usize },
    #[error("train split is empty")]
    EmptyTrain,
    #[error("vocabulary overflow: more than u32::MAX labels")]
    VocabOverflow,
    #[error("invalid graph data: {0}")]
    Invalid(String),
}

/// Bijective label ↔ id map. Ids are assigned in first-insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from labels listed in id order; duplicates are rejected.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, KgError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(KgError::Invalid(alloc::format!("duplicate vocabulary label {label:?}")));
            }
            vocab.intern(&label)?;
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, label: &str) -> Result<u32, KgError> {
        if let Some(&id) = self.index.get(label) {
            return Ok(id);
        }
        let id = u32::try_from(self.labels.len()).map_err(|_| KgError::VocabOverflow)?;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Labels sharing the longest common prefix with `query`, shortest first,
    /// then in label order.
    pub fn nearest_by_prefix(&self, query: &str, limit: usize) -> Vec<&str> {
        let common = |s: &str| s.chars().zip(query.chars()).take_while(|(a, b)| a == b).count();
        let best = self.labels.iter().map(|l| common(l)).max().unwrap_or(0);
        if best == 0 {
            return Vec::new();
        }
        let mut out: Vec<&str> = self.labels.iter().filter(|l| common(l) == best).map(String::as_str).collect();
        out.sort_by_key(|l| (l.len(), *l));
        out.truncate(limit);
        out
    }
}

/// The graph: vocabularies plus all deduplicated triples from every split.
///
/// Triples are stored in file-scan order (train, then valid, then test), so
/// a [`TripleId`] is stable for a given set of input files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    splits: Vec<Split>,
    duplicates: usize,
    cross_split_dropped: usize,
}

impl KnowledgeGraph {
    /// Assembles a graph from already-encoded parts, checking the invariants.
    pub fn from_parts(
        entities: Vocab,
        relations: Vocab,
        triples: Vec<Triple>,
        splits: Vec<Split>,
    ) -> Result<Self, KgError> {
        if triples.len() != splits.len() {
            return Err(KgError::Invalid("split tags do not match triple count".into()));
        }
        if u32::try_from(triples.len()).is_err() {
            return Err(KgError::Invalid("too many triples".into()));
        }
        let (ne, nr) = (entities.len() as u64, relations.len() as u64);
        let mut seen = BTreeSet::new();
        for t in &triples {
            if u64::from(t.head) >= ne || u64::from(t.tail) >= ne || u64::from(t.rel) >= nr {
                return Err(KgError::Invalid(alloc::format!("triple {t:?} has an out-of-range id")));
            }
            if !seen.insert(*t) {
                return Err(KgError::Invalid(alloc::format!("duplicate triple {t:?}")));
            }
        }
        if !splits.contains(&Split::Train) {
            return Err(KgError::EmptyTrain);
        }
        Ok(Self {
            entities,
            relations,
            triples,
            splits,
            duplicates: 0,
            cross_split_dropped: 0,
        })
    }

    /// Restores the loader's skipped-line counters, e.g. after decoding a stored graph.
    pub fn with_load_counts(mut self, duplicates: usize, cross_split_dropped: usize) -> Self {
        self.duplicates = duplicates;
        self.cross_split_dropped = cross_split_dropped;
        self
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, id: TripleId) -> Triple {
        self.triples[id as usize]
    }

    pub fn split_of(&self, id: TripleId) -> Split {
        self.splits[id as usize]
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.splits
    }

    /// Ids of the triples tagged with `split`, ascending.
    pub fn split_ids(&self, split: Split) -> Vec<TripleId> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i as TripleId)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Lines skipped because the same triple already appeared in the same split.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Lines skipped because the triple already appeared in an earlier split.
    pub fn cross_split_dropped(&self) -> usize {
        self.cross_split_dropped
    }
}

/// Incremental parser for the tab-separated `head<TAB>relation<TAB>tail` format.
///
/// Splits must be fed in train, valid, test order for the id assignment to
/// match the conventional file-scan order.
#[derive(Debug, Default)]
pub struct KgBuilder {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    splits: Vec<Split>,
    seen: BTreeMap<Triple, Split>,
    duplicates: usize,
    cross_split_dropped: usize,
}

/// What happened to a single parsed line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineOutcome {
    Added(TripleId),
    Duplicate,
    /// Triple already present in the given earlier split.
    DroppedCrossSplit(Split),
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a whole split file. Blank lines are ignored; a trailing `\r` is stripped.
    pub fn add_split_text(&mut self, split: Split, text: &str) -> Result<Vec<(usize, LineOutcome)>, KgError> {
        let mut notes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let outcome = self.add_line(split, i + 1, line)?;
            if !matches!(outcome, LineOutcome::Added(_)) {
                notes.push((i + 1, outcome));
            }
        }
        Ok(notes)
    }

    fn add_line(&mut self, split: Split, line_no: usize, line: &str) -> Result<LineOutcome, KgError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                split,
                line: line_no,
                found: fields.len(),
            });
        }
        let (h, r, t) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if h.is_empty() || r.is_empty() || t.is_empty() {
            return Err(KgError::EmptyField { split, line: line_no });
        }
        self.add_labels(split, h, r, t)
    }

    pub fn add_labels(&mut self, split: Split, head: &str, rel: &str, tail: &str) -> Result<LineOutcome, KgError> {
        let h = self.entities.intern(head)?;
        let r = self.relations.intern(rel)?;
        let t = self.entities.intern(tail)?;
        let triple = Triple::new(h, r, t);
        match self.seen.get(&triple) {
            Some(&prev) if prev == split => {
                self.duplicates += 1;
                Ok(LineOutcome::Duplicate)
            }
            Some(&prev) => {
                self.cross_split_dropped += 1;
                Ok(LineOutcome::DroppedCrossSplit(prev))
            }
            None => {
                let id = u32::try_from(self.triples.len()).map_err(|_| KgError::VocabOverflow)?;
                self.seen.insert(triple, split);
                self.triples.push(triple);
                self.splits.push(split);
                Ok(LineOutcome::Added(id))
            }
        }
    }

    pub fn finish(self) -> Result<KnowledgeGraph, KgError> {
        if !self.splits.contains(&Split::Train) {
            return Err(KgError::EmptyTrain);
        }
        Ok(KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
            splits: self.splits,
            duplicates: self.duplicates,
            cross_split_dropped: self.cross_split_dropped,
        })
    }
}
