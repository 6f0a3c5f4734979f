//! FRVS: the named-tensor container used for datasets and checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "FRVS" | version u32 | tensor count u32
//! per tensor:
//!   name length u16 | UTF-8 name
//!   dtype u8 (0 = f32, 1 = f64, 2 = u8) | ndim u8 | dims u32 each
//!   payload, row-major
//! ```
//!
//! Write -> read round-trips are bit-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::IoError;
use crate::tensor::{Dtype, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"FRVS";
pub const VERSION: u32 = 1;

/// A u8 tensor (masks, embedded config bytes); the real-valued case is
/// [`Tensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorU8 {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorU8 {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        TensorU8 { dims, data }
    }
}

/// One named entry in a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(TensorU8),
}

impl Entry {
    pub fn dtype(&self) -> Dtype {
        match self {
            Entry::F32(_) => Dtype::F32,
            Entry::F64(_) => Dtype::F64,
            Entry::U8(_) => Dtype::U8,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            Entry::F32(t) => t.dims(),
            Entry::F64(t) => t.dims(),
            Entry::U8(t) => &t.dims,
        }
    }

    pub fn as_f32(&self) -> Option<&Tensor<f32>> {
        match self {
            Entry::F32(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&TensorU8> {
        match self {
            Entry::U8(t) => Some(t),
            _ => None,
        }
    }

    /// Real-valued entries converted into the requested scalar type.
    pub fn to_real<T: Real>(&self) -> Option<Tensor<T>> {
        match self {
            Entry::F32(t) => Some(t.to_dtype()),
            Entry::F64(t) => Some(t.to_dtype()),
            Entry::U8(_) => None,
        }
    }
}

pub fn entry_of<T: Real>(t: &Tensor<T>) -> Entry {
    match T::DTYPE {
        Dtype::F32 => Entry::F32(t.to_dtype()),
        _ => Entry::F64(t.to_dtype()),
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn push_real<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.push(name, entry_of(t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Name-keyed view; duplicate names are a format error at read time.
    pub fn by_name(&self) -> BTreeMap<&str, &Entry> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (code, dims): (u8, &[usize]) = match entry {
                Entry::F32(t) => (0, t.dims()),
                Entry::F64(t) => (1, t.dims()),
                Entry::U8(t) => (2, &t.dims),
            };
            out.push(code);
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match entry {
                Entry::F32(t) => out.extend_from_slice(&t.to_le_bytes()),
                Entry::F64(t) => out.extend_from_slice(&t.to_le_bytes()),
                Entry::U8(t) => out.extend_from_slice(&t.data),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self, IoError> {
        let err = |reason: &str| IoError::format(origin, reason);
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], IoError> {
            if *pos + n > bytes.len() {
                return Err(IoError::format(origin, "truncated container"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(err("bad magic, not an FRVS container"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let mut entries = Vec::with_capacity(count as usize);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| err("tensor name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(err(&format!("duplicate tensor name {name:?}")));
            }
            let code = take(&mut pos, 1)?[0];
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = dims.iter().product();
            let entry = match code {
                0 => {
                    let raw = take(&mut pos, numel * 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::F32(
                        Tensor::new(dims, data)
                            .map_err(|e| IoError::format(origin, e.to_string()))?,
                    )
                }
                1 => {
                    let raw = take(&mut pos, numel * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::F64(
                        Tensor::new(dims, data)
                            .map_err(|e| IoError::format(origin, e.to_string()))?,
                    )
                }
                2 => {
                    let raw = take(&mut pos, numel)?.to_vec();
                    Entry::U8(TensorU8 { dims, data: raw })
                }
                other => return Err(err(&format!("unknown dtype code {other}"))),
            };
            entries.push((name, entry));
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes after last tensor"));
        }
        Ok(Container { entries })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), IoError> {
        let bytes = self.encode();
        let mut f = std::fs::File::create(path)
            .map_err(|e| IoError::file(path.display().to_string(), e))?;
        f.write_all(&bytes)
            .map_err(|e| IoError::file(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, IoError> {
        let mut f = std::fs::File::open(path)
            .map_err(|e| IoError::file(path.display().to_string(), e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)
            .map_err(|e| IoError::file(path.display().to_string(), e))?;
        Container::decode(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_container(seed: u64) -> Container {
        let mut rng = crate::rng::SeedStream::new(seed, "frvs-test").rng(0);
        let mut c = Container::new();
        let n = rng.gen_range(1..6);
        for i in 0..n {
            let ndim = rng.gen_range(1..4);
            let dims: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..5)).collect();
            let numel: usize = dims.iter().product();
            let name = format!("t{i}");
            match rng.gen_range(0..3) {
                0 => c.push(
                    name,
                    Entry::F32(Tensor::from_vec(
                        &dims,
                        (0..numel).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect(),
                    )),
                ),
                1 => c.push(
                    name,
                    Entry::F64(Tensor::from_vec(
                        &dims,
                        (0..numel).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(),
                    )),
                ),
                _ => c.push(
                    name,
                    Entry::U8(TensorU8::new(dims, (0..numel).map(|_| rng.gen()).collect())),
                ),
            }
        }
        c
    }

    #[test]
    fn write_read_write_is_bit_identical() {
        for seed in 0..100 {
            let c = random_container(seed);
            let bytes = c.encode();
            let back = Container::decode(&bytes, "mem").unwrap();
            assert_eq!(back.encode(), bytes, "seed {seed}");
        }
    }

    #[test]
    fn payload_length_is_enforced() {
        let c = random_container(1);
        let mut bytes = c.encode();
        bytes.truncate(bytes.len() - 1);
        assert!(Container::decode(&bytes, "mem").is_err());
        let mut padded = c.encode();
        padded.push(0);
        assert!(Container::decode(&padded, "mem").is_err());
    }

    #[test]
    fn rejects_bad_magic_and_duplicates() {
        let c = random_container(2);
        let mut bytes = c.encode();
        bytes[0] = b'X';
        assert!(Container::decode(&bytes, "mem").is_err());

        let mut dup = Container::new();
        dup.push("same", Entry::U8(TensorU8::new(vec![1], vec![0])));
        dup.push("same", Entry::U8(TensorU8::new(vec![1], vec![1])));
        assert!(Container::decode(&dup.encode(), "mem").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.frvs");
        let c = random_container(3);
        c.write_file(&path).unwrap();
        let back = Container::read_file(&path).unwrap();
        assert_eq!(back, c);
    }
}
