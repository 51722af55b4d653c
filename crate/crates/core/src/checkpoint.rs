//! Binary model checkpoints.
//!
//! Layout: the magic `CHARMT01`, a little-endian `u32` header length, a JSON
//! header (config, model kind, projection mode, vocabularies, tensor count),
//! then every parameter tensor in store order as
//! `u32 name length, name, u32 rank, u32 extents…, f32 values…`, all
//! little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{Vocab, VocabKind};
use crate::encoder::ProjectionMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, Vocabs};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"CHARMT01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabLists {
    source_words: Vec<String>,
    target_words: Vec<String>,
    source_chars: Vec<String>,
    target_chars: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    kind: ModelKind,
    projection: ProjectionMode,
    vocabs: VocabLists,
    tensors: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let v = &model.vocabs;
    let header = Header {
        config: model.config.clone(),
        kind: model.kind,
        projection: model.projection_mode(),
        vocabs: VocabLists {
            source_words: v.source_words.regular_tokens().to_vec(),
            target_words: v.target_words.regular_tokens().to_vec(),
            source_chars: v.source_chars.regular_tokens().to_vec(),
            target_chars: v.target_chars.regular_tokens().to_vec(),
        },
        tensors: model.params.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 4 * model.params.scalar_count() + 64);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    for (_, name, t) in model.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let header_len = r.u32()?;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let lists = header.vocabs;
    let vocabs = Vocabs {
        source_words: Vocab::from_tokens(VocabKind::Word, lists.source_words)?,
        target_words: Vocab::from_tokens(VocabKind::Word, lists.target_words)?,
        source_chars: Vocab::from_tokens(VocabKind::Char, lists.source_chars)?,
        target_chars: Vocab::from_tokens(VocabKind::Char, lists.target_chars)?,
    };
    let mut store = ParamStore::new();
    for _ in 0..header.tensors {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank == 0 || rank > 2 {
            return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        store.insert(name, t)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(header.config, header.kind, vocabs, store, header.projection)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(&bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}

/// Rounds every parameter to `f32`, which is what a save/load round trip
/// does; handy for comparing in-memory models against reloaded ones.
pub fn round_to_f32(params: &mut ParamStore) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for x in params.get_mut(id).data_mut() {
            *x = *x as f32 as f64;
        }
    }
}
