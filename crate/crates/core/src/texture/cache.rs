//! Binary sidecar for encoded latent maps.
//!
//! Layout (little endian): `b"MSLC"`, `u32` version, `u32` key length, key bytes,
//! `u64` width, `u64` height, `u64` dim, then `width * height * dim` `f64` codes.
//! The key is `sha256(texture bytes) ":" sha256(encoder config key)`, so a changed
//! texture or encoder invalidates the cache.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::LatentCodeMap;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSLC";
const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn latent_cache_key(texture_bytes: &[u8], encoder_key: &str) -> String {
    let t = Sha256::digest(texture_bytes);
    let e = Sha256::digest(encoder_key.as_bytes());
    format!("{}:{}", hex(&t), hex(&e))
}

pub fn save_latent_sidecar(path: &Path, key: &str, map: &LatentCodeMap) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + key.len() + map.codes.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    for n in [map.width, map.height, map.dim] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for c in &map.codes {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns `Ok(None)` when the file is missing or was written for a different key.
pub fn load_latent_sidecar(path: &Path, key: &str) -> Result<Option<LatentCodeMap>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |m: &str| Error::Format {
        line: 0,
        message: format!("latent sidecar {}: {m}", path.display()),
    };
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated"))?;
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let klen = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
    let stored_key = cur.take(klen).ok_or_else(|| bad("truncated"))?;
    if stored_key != key.as_bytes() {
        return Ok(None);
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = cur.u64().ok_or_else(|| bad("truncated"))? as usize;
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut codes = Vec::with_capacity(n);
    for _ in 0..n {
        codes.push(f64::from_bits(cur.u64().ok_or_else(|| bad("truncated"))?));
    }
    Ok(Some(LatentCodeMap {
        width: dims[0],
        height: dims[1],
        dim: dims[2],
        codes,
    }))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_round_trip_and_key_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tex.latent");
        let map = LatentCodeMap {
            width: 2,
            height: 3,
            dim: 2,
            codes: (0..12).map(|i| i as f64 / 7.0).collect(),
        };
        let key = latent_cache_key(b"pixels", "identity");
        save_latent_sidecar(&path, &key, &map).unwrap();
        assert_eq!(load_latent_sidecar(&path, &key).unwrap(), Some(map));
        let other = latent_cache_key(b"pixels", "conv3x3");
        assert_eq!(load_latent_sidecar(&path, &other).unwrap(), None);
        assert_eq!(load_latent_sidecar(&dir.path().join("none"), &key).unwrap(), None);
    }
}
