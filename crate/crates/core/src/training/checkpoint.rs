//! `.nnck` checkpoints: named f32 tensors plus a `key=value` metadata block.
//!
//! Layout (little-endian): magic `NNCK`, `u8` version, `u32` tensor count;
//! per tensor a `u16` name length, the UTF-8 name, `u8` ndim, `u32` dims and
//! the f32 payload; then a `u32` length and the UTF-8 metadata text.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Model;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedArray>,
    /// Ordered `key=value` pairs; keys must not contain `=` or newlines.
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    /// Snapshot of every named tensor of `model`, with its construction
    /// arguments and manifest (`layer.NN` keys) in the metadata.
    pub fn from_model<M: Model + ?Sized>(model: &M) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        let mut metadata = model.describe();
        for (i, line) in model.manifest().into_iter().enumerate() {
            metadata.push((format!("layer.{i:02}"), line));
        }
        Self { tensors, metadata }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    /// Architecture manifest recorded by [`Checkpoint::from_model`].
    pub fn manifest(&self) -> Vec<String> {
        self.metadata
            .iter()
            .filter(|(k, _)| k.starts_with("layer."))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Writes the stored values into `model`. Names and shapes must match
    /// exactly.
    pub fn apply_to<M: Model + ?Sized>(&self, model: &M) -> Result<()> {
        let named = model.named_tensors();
        if named.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for ((name, t), a) in named.iter().zip(&self.tensors) {
            if *name != a.name || t.shape() != a.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {name} {:?}",
                    a.name,
                    a.shape,
                    t.shape()
                )));
            }
        }
        for ((_, t), a) in named.iter().zip(&self.tensors) {
            t.set_data(&a.data)?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&u32_of(self.tensors.len(), "tensor count")?.to_le_bytes());
        for a in &self.tensors {
            let name_len = u16::try_from(a.name.len())
                .map_err(|_| Error::param(format!("tensor name {:?} too long", a.name)))?;
            let ndim = u8::try_from(a.shape.len())
                .map_err(|_| Error::param(format!("tensor {} has too many axes", a.name)))?;
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::shape(format!(
                    "tensor {} shape {:?} does not match {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(ndim);
            for &d in &a.shape {
                out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut text = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::param(format!("metadata entry {k:?} not representable")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&u32_of(text.len(), "metadata length")?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(path, format!("tensor {name} shape {shape:?} overflows")))?;
            let data = r
                .take(n)
                .map_err(|_| Error::format(path, format!("payload of tensor {name} {shape:?} is truncated")))?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedArray { name, shape, data });
        }
        let meta_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::format(path, "metadata is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let metadata = text
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::format(path, format!("metadata line {l:?} has no '='")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::param(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::InpaintNet;

    #[test]
    fn round_trip_and_corruption() {
        let net = InpaintNet::new(4, 3);
        let mut ck = Checkpoint::from_model(&net);
        ck.set("lr", "0.001");
        let bytes = ck.encode().unwrap();
        let p = Path::new("m.nnck");
        let back = Checkpoint::decode(&bytes, p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("model"), Some("inpaint"));
        assert_eq!(back.manifest(), net.manifest());

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::Format { .. })));
        for cut in [0, 3, 5, 9, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut], p), Err(Error::Format { .. })), "{cut}");
        }
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(Checkpoint::decode(&v2, p), Err(Error::Format { .. })));
    }

    #[test]
    fn apply_restores_values() {
        let a = InpaintNet::new(4, 1);
        let b = InpaintNet::new(4, 2);
        Checkpoint::from_model(&a).apply_to(&b).unwrap();
        for ((_, x), (_, y)) in a.named_tensors().iter().zip(&b.named_tensors()) {
            assert_eq!(x.to_vec(), y.to_vec());
        }
        let c = InpaintNet::new(8, 1);
        assert!(Checkpoint::from_model(&a).apply_to(&c).is_err());
    }
}
