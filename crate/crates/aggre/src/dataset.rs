//! Loading the three TSV split files into a [`KnowledgeGraph`].

use std::fs;
use std::path::{Path, PathBuf};

use aggre_core::{KgBuilder, KnowledgeGraph, LineOutcome, Split};
use log::warn;

use crate::error::{AppError, Result};

/// Paths of the train/valid/test files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

impl SplitFiles {
    /// `train.txt`, `valid.txt` and `test.txt` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join("train.txt"),
            valid: dir.join("valid.txt"),
            test: dir.join("test.txt"),
        }
    }

    pub fn path(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Reads all three files. Every file must exist; valid and test may be empty.
/// Skipped duplicate and cross-split lines are logged as warnings.
pub fn load(files: &SplitFiles) -> Result<KnowledgeGraph> {
    for split in Split::ALL {
        let path = files.path(split);
        if !path.is_file() {
            return Err(AppError::Data(format!("missing {} split file: {}", split, path.display())));
        }
    }
    let mut builder = KgBuilder::new();
    for split in Split::ALL {
        let path = files.path(split);
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let notes = builder
            .add_split_text(split, &text)
            .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        for (line, outcome) in notes {
            match outcome {
                LineOutcome::Added(_) => {}
                LineOutcome::Duplicate => warn!("{}:{line}: duplicate triple skipped", path.display()),
                LineOutcome::DroppedCrossSplit(prev) => {
                    warn!("{}:{line}: triple already in {prev} split, dropped", path.display())
                }
            }
        }
    }
    Ok(builder.finish()?)
}
