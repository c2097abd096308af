//! Binary weights container shared by all persisted models.
//!
//! Layout (all integers 32-bit little-endian):
//!
//! ```text
//! magic            8 bytes ("DUAWVAE1", "DUAWGEN1", "DUAWCLS1", "DUAWLOR1", "DUAWWMK1")
//! meta_len         u32
//! metadata         meta_len bytes of UTF-8 (key=value lines; may be empty)
//! array_count      u32
//! per array:
//!   name_len       u32
//!   name           name_len bytes of UTF-8
//!   rank           u32
//!   dims           rank x u32
//!   data           prod(dims) x f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{DuawError, Result};
use crate::tensor::Tensor;

pub const MAGIC_VAE: &[u8; 8] = b"DUAWVAE1";
pub const MAGIC_GEN: &[u8; 8] = b"DUAWGEN1";
pub const MAGIC_CLS: &[u8; 8] = b"DUAWCLS1";
pub const MAGIC_LORA: &[u8; 8] = b"DUAWLOR1";
pub const MAGIC_WATERMARK: &[u8; 8] = b"DUAWWMK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub metadata: String,
    arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(magic: &[u8; 8]) -> Self {
        Container {
            magic: *magic,
            metadata: String::new(),
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| DuawError::Container(format!("missing array '{}'", name)))
    }

    pub fn arrays(&self) -> &[(String, Tensor)] {
        &self.arrays
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.metadata
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        let meta = self.metadata.as_bytes();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: Option<&[u8; 8]>) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 8] = cur
            .take(8)?
            .try_into()
            .map_err(|_| DuawError::Container("truncated magic".into()))?;
        if let Some(want) = expected_magic {
            if &magic != want {
                return Err(DuawError::Container(format!(
                    "magic mismatch: expected {:?}, found {:?}",
                    String::from_utf8_lossy(want),
                    String::from_utf8_lossy(&magic)
                )));
            }
        }
        let meta_len = cur.u32()? as usize;
        let metadata = String::from_utf8(cur.take(meta_len)?.to_vec())
            .map_err(|_| DuawError::Container("metadata is not UTF-8".into()))?;
        let count = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| DuawError::Container("array name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = cur.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push((name, Tensor::from_vec(shape, data)?));
        }
        Ok(Container {
            magic,
            metadata,
            arrays,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path, expected_magic: Option<&[u8; 8]>) -> Result<Self> {
        if !path.exists() {
            return Err(DuawError::MissingArtifact(path.display().to_string()));
        }
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, expected_magic)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DuawError::Container(format!(
                "truncated file: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, rng_from};

    #[test]
    fn roundtrip_preserves_everything() {
        let mut c = Container::new(MAGIC_VAE);
        c.metadata = "epsilon=0.05\nseed=42\n".into();
        c.push("enc.w0", normal_tensor(&[4, 3, 3, 3], &mut rng_from(1)));
        c.push("enc.b0", normal_tensor(&[4], &mut rng_from(2)));
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes, Some(MAGIC_VAE)).unwrap();
        assert_eq!(c, back);
        assert_eq!(back.meta_value("seed"), Some("42"));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let c = Container::new(MAGIC_VAE);
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes, Some(MAGIC_GEN)).is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let mut c = Container::new(MAGIC_CLS);
        c.push("w", Tensor::filled(&[8], 1.0));
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3], Some(MAGIC_CLS)).is_err());
    }
}
