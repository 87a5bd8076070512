//! Tensor-archive file format ("STAR1").
//!
//! A flat, bit-exact container for named tensors, used by checkpoints,
//! pseudo-sample caches, synthetic dataset dumps, and the external-backend
//! exchange. Layout:
//!
//! ```text
//! magic "STAR1"
//! repeated records, lexicographically ordered by name:
//!   u32  name length (little-endian)
//!   [u8] UTF-8 name
//!   u8   dtype code (1 = float32 LE, 2 = float64 LE)
//!   u32  rank
//!   u64  dims[rank]
//!   raw  row-major data
//! ```
//!
//! Writers sort records by name; readers reject unsorted or duplicate names
//! so that equal contents always produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"STAR1";

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

/// One named tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32 { dims: Vec<u64>, data: Vec<f32> },
    F64 { dims: Vec<u64>, data: Vec<f64> },
}

impl Tensor {
    pub fn dims(&self) -> &[u64] {
        match self {
            Tensor::F32 { dims, .. } | Tensor::F64 { dims, .. } => dims,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::F32 { data, .. } => data.len(),
            Tensor::F64 { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64 regardless of storage dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Tensor::F32 { data, .. } => data.iter().map(|&v| f64::from(v)).collect(),
            Tensor::F64 { data, .. } => data.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        let expected: u64 = self.dims().iter().product();
        if expected != self.len() as u64 {
            return Err(Error::Archive(format!(
                "dims {:?} imply {} elements, got {}",
                self.dims(),
                expected,
                self.len()
            )));
        }
        Ok(())
    }
}

/// In-memory archive; the map keeps records name-sorted for serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    records: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        tensor.check()?;
        let name = name.into();
        if self.records.contains_key(&name) {
            return Err(Error::Archive(format!("duplicate record name: {name}")));
        }
        self.records.insert(name, tensor);
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Result<()> {
        self.insert(name, Tensor::F32 { dims, data })
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Result<()> {
        self.insert(name, Tensor::F64 { dims, data })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.records
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing record: {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for (name, tensor) in &self.records {
            let name_bytes = name.as_bytes();
            w.write_all(&u32::try_from(name_bytes.len()).map_err(|_| {
                Error::Archive(format!("record name too long: {} bytes", name_bytes.len()))
            })?
            .to_le_bytes())?;
            w.write_all(name_bytes)?;
            match tensor {
                Tensor::F32 { dims, data } => {
                    w.write_all(&[DTYPE_F32])?;
                    write_dims(&mut w, dims)?;
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Tensor::F64 { dims, data } => {
                    w.write_all(&[DTYPE_F64])?;
                    write_dims(&mut w, dims)?;
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Archive(format!("missing magic: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Archive("bad magic, not a tensor archive".into()));
        }
        let mut records = BTreeMap::new();
        let mut last_name: Option<String> = None;
        loop {
            let mut len_buf = [0u8; 4];
            match r.read_exact(&mut len_buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name_len = u32::from_le_bytes(len_buf) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| Error::Archive(format!("record name not UTF-8: {e}")))?;
            if let Some(prev) = &last_name {
                if *prev >= name {
                    return Err(Error::Archive(format!(
                        "records out of lexicographic order: {prev:?} then {name:?}"
                    )));
                }
            }
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let mut rank_buf = [0u8; 4];
            r.read_exact(&mut rank_buf)?;
            let rank = u32::from_le_bytes(rank_buf) as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut d = [0u8; 8];
                r.read_exact(&mut d)?;
                dims.push(u64::from_le_bytes(d));
            }
            let count = dims.iter().product::<u64>() as usize;
            let tensor = match dtype[0] {
                DTYPE_F32 => {
                    let mut raw = vec![0u8; count * 4];
                    r.read_exact(&mut raw)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    Tensor::F32 { dims, data }
                }
                DTYPE_F64 => {
                    let mut raw = vec![0u8; count * 8];
                    r.read_exact(&mut raw)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| {
                            f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                        })
                        .collect();
                    Tensor::F64 { dims, data }
                }
                other => {
                    return Err(Error::Archive(format!("unknown dtype code: {other}")));
                }
            };
            last_name = Some(name.clone());
            records.insert(name, tensor);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_dims(w: &mut impl Write, dims: &[u64]) -> Result<()> {
    w.write_all(
        &u32::try_from(dims.len())
            .map_err(|_| Error::Archive("rank exceeds u32".into()))?
            .to_le_bytes(),
    )?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}
