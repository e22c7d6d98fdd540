//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "LCDNETCK"
//! version      u32       1
//! manifest     u64       architecture hash
//! entries      u32       number of tensors (weight and bias per layer)
//! per entry:   u32 name length, UTF-8 name, u32 rank, u64 extent * rank,
//!              f64 value * product(extents)
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::manifest::ArchitectureManifest;
use super::{Layer, ModelParams};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LCDNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.manifest_hash().to_le_bytes());
    out.extend_from_slice(&((params.layers().len() * 2) as u32).to_le_bytes());
    for layer in params.layers() {
        for (suffix, t) in [("weight", &layer.weights), ("bias", &layer.bias)] {
            let name = format!("{}.{suffix}", layer.name);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &write_checkpoint(params))
}

/// Loads a checkpoint for the default architecture.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    load_checkpoint_with(path, &ArchitectureManifest::lcdnet())
}

pub fn load_checkpoint_with(path: impl AsRef<Path>, manifest: &ArchitectureManifest) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, manifest)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::checkpoint(field, "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes, verifying checksum, version, architecture hash
/// and every tensor name and shape before returning anything.
pub fn read_checkpoint(bytes: &[u8], manifest: &ArchitectureManifest) -> Result<ModelParams> {
    let header_len = CHECKPOINT_MAGIC.len() + 4 + 8 + 4;
    if bytes.len() < header_len + CHECKSUM_LEN {
        return Err(Error::checkpoint("header", format!("file truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::checkpoint("magic", "not an LCDnet checkpoint"));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(Error::checkpoint("checksum", "SHA-256 mismatch (truncated or corrupt file)"));
    }

    let mut cur = Cursor { bytes: body, pos: 8 };
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint("version", format!("unsupported version {version}")));
    }
    let hash = cur.u64("manifest_hash")?;
    if hash != manifest.hash() {
        return Err(Error::checkpoint(
            "manifest_hash",
            format!("checkpoint architecture {hash:#018x} does not match this build ({:#018x})", manifest.hash()),
        ));
    }
    let specs = manifest.layers();
    let entries = cur.u32("entry_count")? as usize;
    if entries != specs.len() * 2 {
        return Err(Error::checkpoint("entry_count", format!("expected {} tensors, found {entries}", specs.len() * 2)));
    }

    let mut layers = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut read_tensor = |suffix: &str, expected: &[usize]| -> Result<Tensor> {
            let want = format!("{}.{suffix}", spec.name);
            let name_len = cur.u32(&format!("{want}.name_length"))? as usize;
            let name = cur.take(name_len, &format!("{want}.name"))?;
            if name != want.as_bytes() {
                return Err(Error::checkpoint(
                    format!("{want}.name"),
                    format!("found `{}`", String::from_utf8_lossy(name)),
                ));
            }
            let rank = cur.u32(&format!("{want}.rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank.min(8) {
                shape.push(cur.u64(&format!("{want}.shape"))? as usize);
            }
            if shape != expected {
                return Err(Error::checkpoint(
                    format!("{want}.shape"),
                    format!("found {shape:?} (rank {rank}), expected {expected:?}"),
                ));
            }
            let n: usize = expected.iter().product();
            let raw = cur.take(n * 8, &format!("{want}.values"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Tensor::new(expected.to_vec(), data)
        };
        let weights = read_tensor("weight", &spec.weight_shape())?;
        let bias = read_tensor("bias", &[spec.conv.out_channels])?;
        layers.push(Layer { name: spec.name.to_string(), weights, bias, spec: spec.conv });
    }
    if cur.pos != body.len() {
        return Err(Error::checkpoint(
            "trailer",
            format!("{} unexpected bytes after the last tensor", body.len() - cur.pos),
        ));
    }
    ModelParams::from_layers(*manifest, layers)
}
