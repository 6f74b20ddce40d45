//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "ISOCKPT\0"
//! version    u32
//! manifest   u32 length + UTF-8 bytes (free-form, may be empty)
//! count      u32
//! per parameter:
//!   name     u32 length + UTF-8 bytes
//!   rank     u32, then rank x u64 dims
//!   payload  product(dims) x f64
//! ```

use std::io::{Read, Write};

use super::tensor::{ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ISOCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParameterStore, manifest: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_str(&mut w, manifest)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        write_str(&mut w, name)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, returning the parameters and the manifest text.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParameterStore, String)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let manifest = read_str(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok((store, manifest))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut rng = RngStream::new(3);
        let mut s = ParameterStore::new();
        s.insert("enc.w", Tensor::randn(&[3, 4], 1.0, &mut rng)).unwrap();
        s.insert("bias", Tensor::randn(&[4], 1.0, &mut rng)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, "{\"k\":1}").unwrap();
        let (back, manifest) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(manifest, "{\"k\":1}");
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
    }
}
