//! Checkpoint container, version 1.
//!
//! A single JSON object:
//!
//! ```text
//! {
//!   "format": "nic-checkpoint",
//!   "version": 1,
//!   "dims": {"feature_dim": F, "embed_dim": E, "hidden_dim": H, "vocab_size": V},
//!   "vocab_hash": "<sha256 hex of the vocabulary>",
//!   "matrices": [{"name": "w_ix", "rows": H, "cols": E, "data": [row-major f64...]}, ...]
//! }
//! ```
//!
//! Matrices appear in [`super::PARAMETER_NAMES`] order. Floats are written
//! in shortest round-trip form, so save/load is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, Parameters};
use crate::data::Vocabulary;
use crate::numerics::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "nic-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: Dims,
    vocab_hash: String,
    matrices: Vec<NamedMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub vocab_hash: String,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &Parameters,
    vocab_hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        dims: params.dims(),
        vocab_hash: vocab_hash.to_string(),
        matrices: params
            .matrices()
            .into_iter()
            .map(|(name, m)| NamedMatrix {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.data().to_vec(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint without checking it against any vocabulary.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unrecognised format '{}'",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let matrices = file
        .matrices
        .into_iter()
        .map(|m| Matrix::new(m.rows, m.cols, m.data).map(|mat| (m.name, mat)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        params: Parameters::from_matrices(file.dims, matrices)?,
        vocab_hash: file.vocab_hash,
    })
}

/// Read a checkpoint and verify it was trained against `vocab`.
pub fn load_checkpoint(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Parameters> {
    let checkpoint = read_checkpoint(path)?;
    if checkpoint.vocab_hash != vocab.hash() {
        return Err(Error::VocabMismatch {
            expected: checkpoint.vocab_hash,
            found: vocab.hash().to_string(),
        });
    }
    if checkpoint.params.dims().vocab_size != vocab.len() {
        return Err(Error::shape(
            "load_checkpoint vocabulary size",
            checkpoint.params.dims().vocab_size,
            vocab.len(),
        ));
    }
    Ok(checkpoint.params)
}
