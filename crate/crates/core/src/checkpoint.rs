//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "STCK" | version u32 | field count u32
//! per field: name len u32 | name utf-8 | dtype u8 (0 = f32, 1 = u64)
//!            | ndim u32 | dims u32 * ndim | payload
//! ```
//!
//! Float fields are stored as `f32`, so a save/load cycle rounds `f64`
//! parameters to single precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: FieldData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub fields: Vec<Field>,
}

impl Checkpoint {
    pub fn push_f32(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        self.fields.push(Field {
            name: name.into(),
            shape: shape.to_vec(),
            data: FieldData::F32(values.to_vec()),
        });
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: &[u64]) {
        self.fields.push(Field {
            name: name.into(),
            shape: vec![values.len()],
            data: FieldData::U64(values.to_vec()),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn get_u64(&self, name: &str) -> Option<&[u64]> {
        match self.get(name).map(|f| &f.data) {
            Some(FieldData::U64(v)) => Some(v),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for f in &self.fields {
            out.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
            out.extend_from_slice(f.name.as_bytes());
            out.push(match f.data {
                FieldData::F32(_) => 0,
                FieldData::U64(_) => 1,
            });
            out.extend_from_slice(&(f.shape.len() as u32).to_le_bytes());
            for d in &f.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            match &f.data {
                FieldData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&(*x as f32).to_le_bytes());
                    }
                }
                FieldData::U64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut fields = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("field name is not utf-8".into()))?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = match dtype {
                0 => FieldData::F32(
                    (0..n)
                        .map(|_| r.array::<4>().map(|b| f32::from_le_bytes(b) as f64))
                        .collect::<Result<_>>()?,
                ),
                1 => FieldData::U64(
                    (0..n)
                        .map(|_| r.array::<8>().map(u64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
            };
            fields.push(Field { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last field".into()));
        }
        Ok(Self { fields })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array::<4>().map(u32::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut ck = Checkpoint::default();
        ck.push_f32(
            "encoder.0.weight",
            &[2, 3],
            &[0.5, -1.0, 2.0, 0.0, 1.5, 3.25],
        );
        ck.push_u64("rng.state", &[7, u64::MAX]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get_u64("rng.state"), Some(&[7, u64::MAX][..]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::default().to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
