//! Binary model checkpoint.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SSTM"
//!      4     4  version (u32 LE) = 1
//!      8     4  config length L (u32 LE)
//!     12     L  configuration as TOML text (UTF-8)
//!   12+L     4  tensor count (u32 LE)
//!   then per tensor:
//!            4  name length (u32 LE), followed by the UTF-8 name
//!            4  rank r (u32 LE), followed by r dims (u32 LE each)
//!            …  values as f32 LE, row-major
//! ```

use std::path::Path;

use super::config::SstConfig;
use super::model::SstModel;
use super::{NetError, Result};
use crate::hsi::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSTM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &SstModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    let cfg = model.config().to_toml();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.tensors().len());
    for (name, t) in model.named() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
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
    fn err(&self, message: impl Into<String>) -> NetError {
        NetError::Checkpoint { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NetError::Checkpoint {
                offset: self.bytes.len(),
                message: format!("file ends inside {what}"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let at = self.pos;
        let raw = self.take(n, what)?;
        std::str::from_utf8(raw).map_err(|e| NetError::Checkpoint { offset: at, message: format!("{what}: {e}") })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SstModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint { offset: 0, message: "bad magic".into() });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(NetError::Checkpoint { offset: 4, message: format!("unsupported version {version}") });
    }
    let len = r.u32("config length")?;
    let config = SstConfig::from_toml(r.text(len, "config")?)?;
    let count = r.u32("tensor count")?;
    let mut named = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32("name length")?;
        let name = r.text(n, "tensor name")?.to_owned();
        let rank = r.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(r.err(format!("{name}: unsupported rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n > 0);
        let numel = numel.ok_or_else(|| r.err(format!("{name}: invalid shape {shape:?}")))?;
        let raw = r.take(numel.saturating_mul(4), "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    SstModel::from_tensors(&config, named)
}

pub fn save_checkpoint(model: &SstModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path, &encode_checkpoint(model))?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SstModel<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| NetError::Io { path: path.to_owned(), source })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn round_trip_and_truncation() {
        let m = SstModel::<f32>::init(&SstConfig::desk(3), SeedStream::new(9)).unwrap();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"SSTM");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
        let err = decode_checkpoint(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, NetError::Checkpoint { offset, .. } if offset == bytes.len() - 1));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(NetError::Checkpoint { offset: 0, .. })));
    }
}
