//! Binary checkpoints: the magic `SSPO1`, a little-endian `u64` metadata
//! length, JSON metadata, then the weights as little-endian `f64` in
//! row-major order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{Matrix, PolicyParams, Vocabulary};

pub const MAGIC: &[u8; 5] = b"SSPO1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub vocab: Vocabulary,
    pub context_window: usize,
    pub temperature: f64,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    /// Training configuration the weights came from, if any.
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub config: Option<serde_json::Value>,
}

pub fn encode_checkpoint(
    params: &PolicyParams,
    vocab: &Vocabulary,
    config: Option<serde_json::Value>,
    seed: u64,
) -> Result<Vec<u8>> {
    if vocab.len() != params.vocab_size() {
        return Err(Error::Shape(format!(
            "vocabulary has {} tokens but parameters have {} columns",
            vocab.len(),
            params.vocab_size()
        )));
    }
    let w = params.weights();
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        vocab: vocab.clone(),
        context_window: params.context_window(),
        temperature: params.temperature(),
        rows: w.rows(),
        cols: w.cols(),
        seed,
        config,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * w.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in w.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| corrupt("bad magic"))?;
    let (len, rest) = rest.split_first_chunk::<8>().ok_or_else(|| corrupt("truncated header"))?;
    let len = usize::try_from(u64::from_le_bytes(*len)).map_err(|_| corrupt("metadata length overflow"))?;
    if rest.len() < len {
        return Err(corrupt("truncated metadata"));
    }
    let (json, body) = rest.split_at(len);
    let meta: CheckpointMeta =
        serde_json::from_slice(json).map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported format version {}", meta.format_version)));
    }
    let expected_rows = meta.context_window * meta.vocab.len() + 1;
    if meta.cols != meta.vocab.len() || meta.rows != expected_rows {
        return Err(Error::CorruptCheckpoint(format!(
            "matrix {}x{} does not fit a {}-token vocabulary with window {}",
            meta.rows,
            meta.cols,
            meta.vocab.len(),
            meta.context_window
        )));
    }
    let count = meta.rows * meta.cols;
    if body.len() != count * 8 {
        return Err(Error::CorruptCheckpoint(format!("expected {} weight bytes, found {}", count * 8, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect();
    let weights = Matrix::from_vec(meta.rows, meta.cols, data)?;
    let params = PolicyParams::new(weights, meta.context_window, meta.temperature, meta.vocab.pad())
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint { params, vocab: meta.vocab, seed: meta.seed, config: meta.config })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(
    params: &PolicyParams,
    vocab: &Vocabulary,
    config: Option<serde_json::Value>,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(params, vocab, config, seed)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
