//! `SMRC` checkpoints: magic, format version, the network description, then
//! every tensor in key order. All integers are little-endian `u32`, tensor
//! data is little-endian `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::NetworkConfig;
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::io::write_bytes;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMRC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(config: &NetworkConfig, params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.scalar_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let echo = config.to_string();
    put_u32(&mut out, echo.len());
    out.extend_from_slice(echo.as_bytes());
    put_u32(&mut out, params.len());
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
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
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.fail("non-UTF-8 string"))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(NetworkConfig, NetworkParams)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.fail("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let config: NetworkConfig = r.string()?.parse().map_err(|e: Error| r.fail(e.to_string()))?;
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.fail("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after the last tensor"));
    }
    let params = NetworkParams::from_map(tensors);
    params.check_against(&config).map_err(|e| r.fail(e.to_string()))?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &NetworkConfig, params: &NetworkParams) -> Result<()> {
    write_bytes(path, &encode_checkpoint(config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkConfig, NetworkParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let c = NetworkConfig {
            veil: true,
            scale_bins: 2,
            dense_layers: 1,
            ..Default::default()
        };
        let p = NetworkParams::build(&c).unwrap();
        let bytes = encode_checkpoint(&c, &p);
        let (c2, p2) = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!((c2, p2), (c, p));
    }

    #[test]
    fn corruption_is_detected() {
        let c = NetworkConfig {
            dense_layers: 1,
            ..Default::default()
        };
        let bytes = encode_checkpoint(&c, &NetworkParams::build(&c).unwrap());
        let p = Path::new("mem");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, p).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(decode_checkpoint(&longer, p).is_err());
    }
}
