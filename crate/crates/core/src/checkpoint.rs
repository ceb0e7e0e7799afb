//! Versioned binary checkpoint format.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic            8 bytes   "ISNCKPT\0"
//! version          u32       FORMAT_VERSION
//! config hash      u64       FNV-1a 64 over the config text bytes
//! config length    u32
//! config text      bytes     UTF-8 `key=value` lines (model + training config)
//! step             u64       optimizer steps completed
//! running loss     f64       smoothed training loss (IEEE-754 bits)
//! tensor count     u32
//! per tensor:
//!   name length    u32
//!   name           bytes     UTF-8
//!   rank           u32
//!   dims           rank x u32
//!   values         prod(dims) x f32
//! optimizer flag   u8        0 = absent, 1 = Adam state follows
//! if flag == 1:
//!   adam steps     u64
//!   per tensor, in the order above: first moment values, then second
//!   moment values, each prod(dims) x f32
//! ```
//!
//! Trailing bytes after the last field are rejected.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Moments, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"ISNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Contents of one checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub running_loss: f64,
    pub params: ParamStore<f32>,
}

/// FNV-1a, 64-bit.
pub fn config_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&self.config).to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.running_loss.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, t.data());
        }
        if self.params.has_optimizer_state() {
            out.push(1);
            out.extend_from_slice(&self.params.adam_steps().to_le_bytes());
            for (name, t) in self.params.iter() {
                match self.params.moments(name) {
                    Some(mo) => {
                        put_f32s(&mut out, mo.m.data());
                        put_f32s(&mut out, mo.v.data());
                    }
                    None => {
                        let zeros = vec![0.0f32; t.len()];
                        put_f32s(&mut out, &zeros);
                        put_f32s(&mut out, &zeros);
                    }
                }
            }
        } else {
            out.push(0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion { found: version, supported: FORMAT_VERSION });
        }
        let hash = r.u64()?;
        let len = r.u32()? as usize;
        let config = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?
            .to_string();
        if config_hash(&config) != hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let step = r.u64()?;
        let running_loss = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
            let data = r.f32s(numel)?;
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        match r.take(1)?[0] {
            0 => {}
            1 => {
                let steps = r.u64()?;
                let mut moments = IndexMap::new();
                let shapes: Vec<(String, Vec<usize>)> =
                    params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
                for (name, shape) in shapes {
                    let numel = shape.iter().product();
                    let m = Tensor::new(shape.clone(), r.f32s(numel)?)?;
                    let v = Tensor::new(shape, r.f32s(numel)?)?;
                    moments.insert(name, Moments { m, v });
                }
                params.set_optimizer_state(steps, moments)?;
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, step, running_loss, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_bytes(&bytes)
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{param_count, Adam};

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a.weight", Tensor::from_fn(&[3, 2], |i| i as f32 * 0.25)).unwrap();
        params.insert("a.bias", Tensor::from_fn(&[2], |i| -(i as f32))).unwrap();
        Checkpoint { config: "variant=inter_subnet\nn=15\n".into(), step: 7, running_loss: 0.125, params }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut ck = sample();
        let grads: IndexMap<String, Tensor<f32>> =
            ck.params.iter().map(|(n, t)| (n.to_string(), t.map(|v| v + 1.0))).collect();
        Adam::default().step(&mut ck.params, &grads).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(param_count(&back.params), param_count(&ck.params));
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn truncation_is_a_clean_error() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 12, 30, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_mismatch_reports_both() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains('9') && err.contains('1'), "{err}");
    }

    #[test]
    fn corrupted_config_detected() {
        let mut bytes = sample().to_bytes();
        bytes[25] ^= 0x20;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
