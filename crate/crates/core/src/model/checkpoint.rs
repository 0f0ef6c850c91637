//! Flat binary weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "STEERCK\0"
//! version      u32       1
//! config_hash  u64       ModelConfig::hash()
//! count        u32       number of tensor records
//! record*      name_len u32, name utf-8, rank u32, extents u64 × rank,
//!              payload f64 × product(extents)
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STEERCK\0";
pub const VERSION: u32 = 1;

pub fn encode(config_hash: u64, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + params.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!("checkpoint truncated: wanted {n} bytes at {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decoded checkpoint: config hash and named tensors in file order.
#[derive(Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let config_hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse {
                offset: at,
                message: "tensor name is not utf-8".into(),
            })?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Parse {
            offset: at,
            message: format!("tensor {name}: {e}"),
        })?;
        tensors.push((name, t));
    }
    Ok(Checkpoint {
        config_hash,
        tensors,
    })
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model.config().hash(), model.params());
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Builds a model for `config` and fills it from the checkpoint at `path`.
/// A config-hash mismatch or any missing/extra tensor is a
/// [`Error::CheckpointMismatch`].
pub fn load(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ck = decode(&bytes)?;
    if ck.config_hash != config.hash() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint config hash {:016x} != model config hash {:016x}",
            ck.config_hash,
            config.hash()
        )));
    }
    let mut model = Model::new(config.clone(), 0)?;
    if ck.tensors.len() != model.params().len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {} tensors, model has {}",
            ck.tensors.len(),
            model.params().len()
        )));
    }
    for (name, t) in ck.tensors {
        model.params_mut().set(&name, t)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    #[test]
    fn round_trip_and_mismatch() {
        let cfg = ModelConfig::miniature(ModelKind::CnnLstm, 2);
        let model = Model::new(cfg.clone(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&cfg, &path).unwrap();
        assert_eq!(loaded.params(), model.params());

        let mut other = cfg.clone();
        other.lstm_hidden = 8;
        assert!(matches!(
            load(&other, &path),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let cfg = ModelConfig::miniature(ModelKind::ResnetReg, 1);
        let bytes = encode(cfg.hash(), Model::new(cfg, 0).unwrap().params());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            decode(b"NOTACKPTxxxx"),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
