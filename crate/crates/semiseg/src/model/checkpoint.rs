//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, JSON header
//! (architecture, config fingerprint, normalization-stats reference, tensor
//! directory), then raw little-endian f64 tensor data in directory order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{UNet, UNetArch};

const MAGIC: &[u8; 8] = b"SSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: UNetArch,
    /// Hash of the experiment configuration that produced this state.
    pub config_fingerprint: String,
    /// File name of the normalization stats saved alongside the checkpoint.
    pub norm_stats: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

/// Writes the network parameters to `path`.
pub fn save(net: &mut UNet, path: &Path, config_fingerprint: &str, norm_stats: &str) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    net.visit_params(&mut |p| {
        tensors.push(TensorEntry { name: p.name.to_string(), len: p.value.len() });
        payload.extend_from_slice(p.value);
    });
    let meta = CheckpointMeta {
        arch: net.arch,
        config_fingerprint: config_fingerprint.to_string(),
        norm_stats: norm_stats.to_string(),
        tensors,
    };
    let header = serde_json::to_vec(&meta)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for v in payload {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint, reconstructing the network from the stored
/// architecture and parameters.
pub fn load(path: &Path) -> Result<(UNet, CheckpointMeta)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let mut buf4 = [0u8; 4];
    input.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut buf8 = [0u8; 8];
    input.read_exact(&mut buf8)?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    let mut net = UNet::new(meta.arch, 0);
    let mut expected = Vec::new();
    net.visit_params(&mut |p| expected.push((p.name.to_string(), p.value.len())));
    if expected.len() != meta.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count mismatch: file has {}, architecture needs {}",
            meta.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, len)) in meta.tensors.iter().zip(&expected) {
        if &entry.name != name || entry.len != *len {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: file has {} ({}), architecture needs {} ({})",
                entry.name, entry.len, name, len
            )));
        }
    }

    let total: usize = meta.tensors.iter().map(|t| t.len).sum();
    let mut raw = vec![0u8; total * 8];
    input.read_exact(&mut raw)?;
    let mut values = Vec::with_capacity(total);
    for chunk in raw.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    let mut offset = 0usize;
    net.visit_params(&mut |p| {
        p.value.copy_from_slice(&values[offset..offset + p.value.len()]);
        offset += p.value.len();
    });
    Ok((net, meta))
}
