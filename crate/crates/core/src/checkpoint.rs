//! Model checkpoint container.
//!
//! Layout: magic `HEDGECKP`, format version (u32), a JSON header (model
//! spec, seed, hashes, parameter names and shapes, free-form metadata),
//! the word table if any, then every parameter tensor in store order as
//! little-endian f64. Reloading rebuilds the model from the spec and seed
//! and overwrites every tensor, so round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::embeddings::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelSpec};

const MAGIC: &[u8; 8] = b"HEDGECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    /// Hash of the prepared corpus vocabulary the model was trained against.
    pub corpus_vocab_hash: String,
    pub word_vocab_hash: Option<String>,
    pub tagset: Vec<String>,
    pub tagset_hash: String,
    pub params: Vec<ParamEntry>,
    /// Training config, history summary and anything else worth keeping.
    pub meta: serde_json::Value,
}

pub fn tagset_hash(tagset: &[String]) -> String {
    Vocab::from_tokens(tagset.iter().cloned()).hash()
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    corpus_vocab_hash: &str,
    meta: serde_json::Value,
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        spec: model.spec.clone(),
        seed: model.seed,
        corpus_vocab_hash: corpus_vocab_hash.to_string(),
        word_vocab_hash: model.word_table().map(|t| t.vocab().hash()),
        tagset: model.tagset().to_vec(),
        tagset_hash: tagset_hash(model.tagset()),
        params: model
            .store
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_string(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u32(w, FORMAT_VERSION)?;
        binio::write_str(w, &json)?;
        match model.word_table() {
            Some(t) => {
                binio::write_u8(w, 1)?;
                binio::write_u64(w, t.vocab().len() as u64)?;
                for tok in &t.vocab().tokens()[2..] {
                    binio::write_str(w, tok)?;
                }
                binio::write_tensor(w, t.rows())?;
            }
            None => binio::write_u8(w, 0)?,
        }
        for p in model.store.iter() {
            binio::write_tensor(w, &p.tensor)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        line: 0,
        message: message.into(),
    }
}

/// Loads a checkpoint, returning the model and its header.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Header)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(format_err(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let version = binio::read_u32(&mut r).map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header: Header = serde_json::from_str(&binio::read_str(&mut r).map_err(io)?)?;
    let words = if binio::read_u8(&mut r).map_err(io)? == 1 {
        let n = binio::read_u64(&mut r).map_err(io)? as usize;
        let mut tokens = Vec::with_capacity(n.saturating_sub(2));
        for _ in 2..n {
            tokens.push(binio::read_str(&mut r).map_err(io)?);
        }
        let vocab = Vocab::from_tokens(tokens);
        let rows = binio::read_tensor(&mut r).map_err(io)??;
        Some(EmbeddingTable::new(vocab, rows, false)?)
    } else {
        None
    };
    let found = words.as_ref().map(|t| t.vocab().hash());
    if found != header.word_vocab_hash {
        return Err(Error::VocabMismatch {
            expected: header.word_vocab_hash.clone().unwrap_or_default(),
            found: found.unwrap_or_default(),
        });
    }
    if tagset_hash(&header.tagset) != header.tagset_hash {
        return Err(Error::VocabMismatch {
            expected: header.tagset_hash.clone(),
            found: tagset_hash(&header.tagset),
        });
    }
    let mut model = build_model(&header.spec, words, &header.tagset, header.seed)?;
    if model.store.len() != header.params.len() {
        return Err(format_err(format!(
            "checkpoint lists {} parameters, model has {}",
            header.params.len(),
            model.store.len()
        )));
    }
    for entry in &header.params {
        let t = binio::read_tensor(&mut r).map_err(io)??;
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| format_err(format!("unknown parameter `{}`", entry.name)))?;
        let slot = model.store.get_mut(id);
        if t.shape() != entry.shape.as_slice() || slot.shape() != t.shape() {
            return Err(format_err(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                entry.name,
                t.shape(),
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    Ok((model, header))
}
