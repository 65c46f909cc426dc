//! The `EDAT` binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"EDAT"
//! version  u32 (= 1)
//! meta     u32 byte length, then UTF-8 `key=value` lines
//! count    u32 number of tensors
//! tensor*  u32 name length, name bytes, u32 dtype code, u32 rank,
//!          rank × u32 dims, row-major element data
//! ```
//!
//! Dtype code 0 is `f32`, 1 is `f64`. Feature files hold a single tensor
//! named `features`; checkpoints hold one tensor per parameter.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EDAT";
pub const VERSION: u32 = 1;

/// A decoded container: ordered metadata plus named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container<T> {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Container<T> {
    pub fn new() -> Self {
        Self { meta: BTreeMap::new(), tensors: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Option<V> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        put_u32(w, meta.len() as u32)?;
        w.write_all(meta.as_bytes())?;
        put_u32(w, self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            put_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            put_u32(w, T::DTYPE_CODE)?;
            put_u32(w, t.dims().len() as u32)?;
            for &d in t.dims() {
                put_u32(w, d as u32)?;
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for &v in t.data() {
                if T::DTYPE_CODE == 0 {
                    buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                } else {
                    buf.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Decodes a container. Elements stored as either dtype are converted to `T`.
    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let meta_len = get_u32(r)? as usize;
        let meta_txt = String::from_utf8(read_vec(r, meta_len)?).map_err(|e| e.to_string())?;
        let mut meta = BTreeMap::new();
        for line in meta_txt.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad meta line {line:?}"))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = get_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = get_u32(r)? as usize;
            let name = String::from_utf8(read_vec(r, nlen)?).map_err(|e| e.to_string())?;
            let dtype = get_u32(r)?;
            let rank = get_u32(r)? as usize;
            if rank > 8 {
                return Err(format!("{name}: rank {rank} too large"));
            }
            let dims = (0..rank).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let data: Vec<T> = match dtype {
                0 => read_vec(r, n * 4)?
                    .chunks_exact(4)
                    .map(|b| T::from_f64_lossy(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                    .collect(),
                1 => read_vec(r, n * 8)?
                    .chunks_exact(8)
                    .map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().unwrap())))
                    .collect(),
                d => return Err(format!("{name}: unknown dtype code {d}")),
            };
            tensors.push((name, Tensor::new(dims, data).map_err(|e| e.to_string())?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r).map_err(|msg| Error::Container { path: path.to_path_buf(), msg })
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> std::result::Result<Vec<u8>, String> {
    let mut v = Vec::new();
    r.take(n as u64).read_to_end(&mut v).map_err(|e| e.to_string())?;
    if v.len() != n {
        return Err(format!("truncated: wanted {n} bytes, got {}", v.len()));
    }
    Ok(v)
}
