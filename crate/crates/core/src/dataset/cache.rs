//! On-disk flow cache: one file per frame pair.
//!
//! File layout, little-endian: magic `STFLOW1\0`, height u32, width u32,
//! then `u` and `v` planes as row-major f32.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{compute_dense_flow, FlowField, FlowParams, Frame};

pub const FLOW_MAGIC: &[u8; 8] = b"STFLOW1\0";

#[derive(Clone, Debug)]
pub struct FlowCache {
    dir: PathBuf,
}

/// Hex SHA-256 over both frames' extents and pixel bits plus the flow parameters.
pub fn flow_key(prev: &Frame, next: &Frame, params: &FlowParams) -> String {
    let mut h = Sha256::new();
    for f in [prev, next] {
        h.update((f.width() as u64).to_le_bytes());
        h.update((f.height() as u64).to_le_bytes());
        for v in f.pixels() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update(params.describe().as_bytes());
    hex::encode(h.finalize())
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * flow.u.len());
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for &x in flow.u.iter().chain(&flow.v) {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    let bad = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.to_owned(),
    };
    if bytes.len() < 16 || &bytes[..8] != FLOW_MAGIC {
        return Err(bad(0, "not a flow cache file"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let n = w * h;
    if bytes.len() != 16 + 8 * n {
        return Err(bad(bytes.len(), "flow cache payload has the wrong length"));
    }
    let plane = |k: usize| -> Vec<f64> {
        bytes[16 + 4 * k * n..16 + 4 * (k + 1) * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    FlowField::new(w, h, plane(0), plane(1))
}

impl FlowCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(FlowCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.flow"))
    }

    /// Reads the cached flow for the pair, computing and storing it on a miss.
    /// Hits and misses return the same fp32-rounded field.
    pub fn get_or_compute(
        &self,
        prev: &Frame,
        next: &Frame,
        params: &FlowParams,
    ) -> Result<FlowField> {
        let path = self.path_for(&flow_key(prev, next, params));
        if let Ok(bytes) = fs::read(&path) {
            match decode_flow(&bytes) {
                Ok(f) if f.width() == prev.width() && f.height() == prev.height() => return Ok(f),
                _ => log::warn!("ignoring corrupt flow cache entry {}", path.display()),
            }
        }
        let mut flow = compute_dense_flow(prev, next, params)?;
        flow.quantize_f32();
        write_atomic(&path, &encode_flow(&flow))?;
        Ok(flow)
    }
}

/// Writes to a sibling temp file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}
