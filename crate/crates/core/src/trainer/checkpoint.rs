//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `AFSCKPT1`, a little-endian `u32` byte length
//! followed by a UTF-8 JSON metadata document, the tensors as little-endian
//! `f32` values in the order the metadata lists them, and finally the
//! CRC-32 of every preceding byte (little-endian `u32`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, LearnerParams};
use crate::nn::param::{ParamTensor, Parameters};
use crate::nn::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFSCKPT1";
const FORMAT_NAME: &str = "afs-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format: String,
    version: u32,
    attention: Option<AttentionConfig>,
    learner: Option<LearnerConfig>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
}

/// Attention and/or learner parameters restored from a checkpoint. Adam
/// moments are zero and every tensor is trainable.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub attention: Option<AttentionParams>,
    pub learner: Option<LearnerParams>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(self.attention.as_ref(), self.learner.as_ref())
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        decode(bytes, origin)
    }

    /// The learner part, checked tensor by tensor against `expected`.
    pub fn learner_for(&self, expected: &LearnerConfig, origin: &Path) -> Result<LearnerParams> {
        let stored = self.learner.as_ref().ok_or_else(|| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason: "no learner tensors in checkpoint".into(),
        })?;
        let mut params = LearnerParams::zeros(expected.clone())?;
        copy_tensors(stored.params(), &mut params.params_mut())?;
        if stored.config() != expected {
            return Err(Error::Checkpoint {
                path: origin.to_path_buf(),
                reason: format!("learner architecture {:?} differs from {:?}", stored.config(), expected),
            });
        }
        Ok(params)
    }
}

fn copy_tensors(from: Vec<&ParamTensor>, to: &mut [&mut ParamTensor]) -> Result<()> {
    for dst in to.iter_mut() {
        let src = from.iter().find(|p| p.name() == dst.name()).ok_or_else(|| {
            Error::contract(format!("tensor `{}` missing from checkpoint", dst.name()))
        })?;
        dst.set_value(src.value().clone())?;
    }
    if from.len() != to.len() {
        return Err(Error::contract(format!(
            "checkpoint holds {} learner tensors, architecture needs {}",
            from.len(),
            to.len()
        )));
    }
    Ok(())
}

fn encode(attention: Option<&AttentionParams>, learner: Option<&LearnerParams>) -> Result<Vec<u8>> {
    let mut tensors: Vec<&ParamTensor> = Vec::new();
    if let Some(a) = attention {
        tensors.extend(a.params());
    }
    if let Some(l) = learner {
        tensors.extend(l.params());
    }
    let meta = Metadata {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        attention: attention.map(|a| *a.config()),
        learner: learner.map(|l| l.config().clone()),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name().to_string(),
                shape: [t.shape().0, t.shape().1],
                dtype: "f32".into(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::contract(format!("metadata encoding: {e}")))?;
    let payload: usize = tensors.iter().map(|t| t.value().len()).sum();
    let mut out = Vec::with_capacity(8 + 4 + json.len() + 4 * payload + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let json_len = u32::try_from(json.len()).map_err(|_| Error::contract("metadata too large"))?;
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        for &v in t.value().as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn decode(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::Checkpoint {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(fail(format!("checksum mismatch: file is only {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(fail(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    if &body[..8] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let json_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let json = body
        .get(12..12 + json_len)
        .ok_or_else(|| fail("metadata extends past end of file".into()))?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| fail(format!("metadata: {e}")))?;
    if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
        return Err(fail(format!("unsupported format {} version {}", meta.format, meta.version)));
    }

    let mut cursor = &body[12 + json_len..];
    let mut values = Vec::with_capacity(meta.tensors.len());
    for entry in &meta.tensors {
        if entry.dtype != "f32" {
            return Err(fail(format!("tensor `{}` has unsupported dtype {}", entry.name, entry.dtype)));
        }
        let [r, c] = entry.shape;
        let n = r.checked_mul(c).ok_or_else(|| fail("tensor shape overflows".into()))?;
        let byte_len = n.checked_mul(4).filter(|&b| b <= cursor.len()).ok_or_else(|| {
            fail(format!("tensor `{}` extends past end of file", entry.name))
        })?;
        let (chunk, rest) = cursor.split_at(byte_len);
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        values.push((entry.name.as_str(), Matrix::from_vec(r, c, data)?));
        cursor = rest;
    }
    if !cursor.is_empty() {
        return Err(fail(format!("{} trailing bytes after tensors", cursor.len())));
    }

    let mut fill = |params: &mut [&mut ParamTensor]| -> Result<()> {
        for p in params.iter_mut() {
            let pos = values
                .iter()
                .position(|(name, _)| *name == p.name())
                .ok_or_else(|| fail(format!("tensor `{}` missing", p.name())))?;
            let (_, m) = values.swap_remove(pos);
            p.set_value(m)?;
        }
        Ok(())
    };
    let attention = match meta.attention {
        Some(cfg) => {
            let mut a = AttentionParams::zeros(cfg)?;
            fill(&mut a.params_mut())?;
            Some(a)
        }
        None => None,
    };
    let learner = match meta.learner {
        Some(cfg) => {
            let mut l = LearnerParams::zeros(cfg)?;
            fill(&mut l.params_mut())?;
            Some(l)
        }
        None => None,
    };
    if let Some((name, _)) = values.first() {
        return Err(fail(format!("unexpected tensor `{name}`")));
    }
    Ok(Checkpoint { attention, learner })
}

/// Writes the given parts atomically (temporary file, then rename). At least
/// one part is required. Values are stored as `f32`.
pub fn save_checkpoint(
    path: &Path,
    attention: Option<&AttentionParams>,
    learner: Option<&LearnerParams>,
) -> Result<()> {
    if attention.is_none() && learner.is_none() {
        return Err(Error::contract("a checkpoint needs attention or learner parameters"));
    }
    let bytes = encode(attention, learner)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
