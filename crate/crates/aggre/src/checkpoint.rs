//! Model checkpoints.
//!
//! ```text
//! "AGGRE1" dim:u32 entities:u32 relations:u32 layers:u32 seed:u64 epoch:u32
//! entity table  f32 x entities*dim
//! relation table f32 x relations*dim
//! has_adam:u8 [ step:u64 entity_m entity_v relation_m relation_v ]
//! ```
//!
//! Integers and floats are little-endian. The vocabularies are written next to
//! the checkpoint as `<name>.entities.txt` and `<name>.relations.txt`, one label
//! per line in id order.

use std::fs;
use std::path::{Path, PathBuf};

use aggre_core::{AdamState, EmbeddingState, Matrix, Vocab};

use crate::error::{AppError, Result};
use crate::wire::{Reader, Writer};

pub const MAGIC: &[u8; 6] = b"AGGRE1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub layers: u32,
    pub seed: u64,
    pub epoch: u32,
    pub state: EmbeddingState<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let s = &self.state;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(s.dim() as u32);
        w.u32(s.entities.rows() as u32);
        w.u32(s.relations.rows() as u32);
        w.u32(self.layers);
        w.u64(self.seed);
        w.u32(self.epoch);
        w.f32s(s.entities.as_slice().iter().copied());
        w.f32s(s.relations.as_slice().iter().copied());
        match &self.adam {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.u64(a.step);
                for m in [&a.entity_m, &a.entity_v, &a.relation_m, &a.relation_v] {
                    w.f32s(m.as_slice().iter().copied());
                }
            }
        }
        w.buf
    }

    pub fn decode(data: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(data);
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err("bad magic, not a checkpoint".into());
        }
        let dim = r.u32()? as usize;
        let ne = r.u32()? as usize;
        let nr = r.u32()? as usize;
        let layers = r.u32()?;
        let seed = r.u64()?;
        let epoch = r.u32()?;
        let table = |r: &mut Reader<'_>, rows: usize| -> Result<Matrix<f32>, String> {
            let n = rows.checked_mul(dim).ok_or("table size overflow")?;
            Ok(Matrix::from_vec(rows, dim, r.f32s(n)?))
        };
        let state = EmbeddingState::new(table(&mut r, ne)?, table(&mut r, nr)?);
        let adam = match r.u8()? {
            0 => None,
            1 => Some(AdamState {
                step: r.u64()?,
                entity_m: table(&mut r, ne)?,
                entity_v: table(&mut r, ne)?,
                relation_m: table(&mut r, nr)?,
                relation_v: table(&mut r, nr)?,
            }),
            b => return Err(format!("bad adam flag {b}")),
        };
        r.finish()?;
        Ok(Self {
            layers,
            seed,
            epoch,
            state,
            adam,
        })
    }

    pub fn write(&self, path: &Path, entities: &Vocab, relations: &Vocab) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| AppError::io(path, e))?;
        let (ep, rp) = vocab_paths(path);
        write_vocab(&ep, entities)?;
        write_vocab(&rp, relations)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::decode(&data).map_err(|m| AppError::format(path, m))
    }

    /// Reads the side-car vocabularies, if both are present.
    pub fn read_vocabs(path: &Path) -> Result<Option<(Vocab, Vocab)>> {
        let (ep, rp) = vocab_paths(path);
        if !ep.is_file() || !rp.is_file() {
            return Ok(None);
        }
        Ok(Some((read_vocab(&ep)?, read_vocab(&rp)?)))
    }
}

pub fn vocab_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (
        checkpoint.with_file_name(format!("{stem}.entities.txt")),
        checkpoint.with_file_name(format!("{stem}.relations.txt")),
    )
}

fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut text = String::new();
    for label in vocab.labels() {
        text.push_str(label);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    Vocab::from_labels(text.lines()).map_err(|e| AppError::format(path, e.to_string()))
}
