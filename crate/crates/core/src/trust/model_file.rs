//! Scorer model file.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "UWTSCORE"
//! 8       4           format version (u32, currently 1)
//! 12      6 * 4       layers, model_dim, heads, ff_dim, input_dim, seq_len (u32 each)
//! 36      8           parameter count P (u64)
//! 44      8 * D       input normalization shift (f64), D = input_dim
//! ..      8 * D       input normalization scale (f64)
//! ..      8 * P       parameters (f64) in layout order
//! ..      32          SHA-256 of every preceding byte
//! ```
//!
//! Layout order is `in_w, in_b, pos`, then for each layer `ln1_g, ln1_b,
//! wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2`, then
//! `head_w, head_b`. Matrices are row-major with shape `(fan_in, fan_out)`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::scorer::{Real, Scorer, ScorerConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UWTSCORE";
const VERSION: u32 = 1;

pub fn encode<T: Real>(model: &Scorer<T>) -> Vec<u8> {
    let c = model.config();
    let (shift, scale) = model.norm();
    let mut out = Vec::with_capacity(84 + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.layers, c.model_dim, c.heads, c.ff_dim, c.input_dim, c.seq_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for x in shift.iter().chain(scale).chain(model.params()) {
        out.extend_from_slice(&x.f64().to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
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
            .ok_or_else(|| Error::ModelFormat("truncated model file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Scorer<T>> {
    if bytes.len() < 8 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::ModelFormat("not a scorer model file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::ModelFormat("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ScorerConfig {
        layers: dims[0],
        model_dim: dims[1],
        heads: dims[2],
        ff_dim: dims[3],
        input_dim: dims[4],
        seq_len: dims[5],
    };
    config.validate()?;
    let count = r.u64()? as usize;
    if count != config.param_count() {
        return Err(Error::ModelFormat(format!(
            "header declares {count} parameters, config implies {}",
            config.param_count()
        )));
    }
    let conv = |v: Vec<f64>| v.into_iter().map(T::c).collect::<Vec<T>>();
    let shift = conv(r.f64s(config.input_dim)?);
    let scale = conv(r.f64s(config.input_dim)?);
    let params = conv(r.f64s(count)?);
    if r.pos != body.len() {
        return Err(Error::ModelFormat("trailing bytes after parameters".into()));
    }
    Scorer::from_parts(config, params, shift, scale)
}

pub fn save<T: Real>(model: &Scorer<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Scorer<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStreams;

    fn model() -> Scorer<f32> {
        let cfg = ScorerConfig {
            layers: 1,
            model_dim: 4,
            heads: 2,
            ff_dim: 6,
            input_dim: 7,
            seq_len: 5,
        };
        let mut rng = RngStreams::new(1).stream("training-init");
        let mut m = Scorer::init(cfg, &mut rng).unwrap();
        m.set_norm(vec![0.5; 7], vec![2.0; 7]).unwrap();
        m
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let bytes = encode(&m);
        let back: Scorer<f32> = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
        let wide: Scorer<f64> = decode(&bytes).unwrap();
        assert_eq!(encode(&wide), bytes);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&model());
        bytes[60] ^= 1;
        assert!(matches!(decode::<f32>(&bytes), Err(Error::ModelFormat(_))));
        assert!(decode::<f32>(b"garbage").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = model();
        save(&m, &p).unwrap();
        assert_eq!(load::<f32>(&p).unwrap(), m);
    }
}
