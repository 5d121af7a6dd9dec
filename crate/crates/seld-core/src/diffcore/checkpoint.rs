//! Versioned binary parameter container.
//!
//! Layout (all integers little-endian; see docs/formats.md):
//!
//! ```text
//! magic        8 bytes  b"SELDCKP1"
//! version      u32
//! config_hash  u64      FNV-1a of the canonical config text
//! config_len   u32      followed by that many bytes of config TOML
//! n_entries    u32
//! entry*:
//!   name_len   u16      followed by the UTF-8 name path
//!   dtype      u8       0 = raw bytes, 4 = f32, 8 = f64
//!   ndim       u8
//!   dims       u32 * ndim
//!   data       numel * dtype_size bytes (raw: numel bytes, ndim = 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::array::Array;
use super::element::Element;
use super::params::ParamStore;
use crate::error::{Result, SeldError};

pub const CKPT_MAGIC: &[u8; 8] = b"SELDCKP1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum CkptValue {
    F32(Array<f32>),
    F64(Array<f64>),
    Bytes(Vec<u8>),
}

impl CkptValue {
    pub fn as_array<E: Element>(&self) -> Result<Array<E>> {
        match self {
            CkptValue::F32(a) => Ok(a.cast()),
            CkptValue::F64(a) => Ok(a.cast()),
            CkptValue::Bytes(_) => Err(SeldError::Format("entry holds raw bytes, not an array".into())),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match self {
            CkptValue::Bytes(b) => Ok(b),
            _ => Err(SeldError::Format("entry holds an array, not raw bytes".into())),
        }
    }
}

#[derive(Default)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub config_text: String,
    pub entries: Vec<(String, CkptValue)>,
}

impl Checkpoint {
    pub fn new(config_text: String, config_hash: u64) -> Self {
        Checkpoint { config_hash, config_text, entries: Vec::new() }
    }

    pub fn push_array<E: Element>(&mut self, name: &str, arr: &Array<E>) {
        let value = match E::DTYPE_TAG {
            4 => CkptValue::F32(arr.cast()),
            _ => CkptValue::F64(arr.cast()),
        };
        self.entries.push((name.to_string(), value));
    }

    pub fn push_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.entries.push((name.to_string(), CkptValue::Bytes(bytes)));
    }

    pub fn get(&self, name: &str) -> Option<&CkptValue> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Snapshot of every parameter and buffer in a store.
    pub fn from_params<E: Element>(
        store: &ParamStore<E>,
        config_text: String,
        config_hash: u64,
    ) -> Self {
        let mut ckpt = Checkpoint::new(config_text, config_hash);
        for p in store.iter() {
            ckpt.push_array(&p.name, &p.value);
        }
        ckpt
    }

    /// Writes checkpoint arrays back into a store built from the same model
    /// config. Every store entry must be present with a matching shape.
    pub fn load_into<E: Element>(&self, store: &mut ParamStore<E>) -> Result<()> {
        for p in store.iter_mut() {
            let value = self
                .entries
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, v)| v)
                .ok_or_else(|| {
                    SeldError::Format(format!("checkpoint is missing parameter {}", p.name))
                })?;
            let arr: Array<E> = value.as_array()?;
            if arr.shape != p.value.shape {
                return Err(SeldError::Format(format!(
                    "checkpoint shape {:?} for {} does not match model shape {:?}",
                    arr.shape, p.name, p.value.shape
                )));
            }
            p.value = arr;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io = |e| SeldError::io(path.display().to_string(), e);
        w.write_all(CKPT_MAGIC).map_err(io)?;
        w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&self.config_hash.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.config_text.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(self.config_text.as_bytes()).map_err(io)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, value) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            match value {
                CkptValue::Bytes(b) => {
                    w.write_all(&[0u8, 1u8]).map_err(io)?;
                    w.write_all(&(b.len() as u32).to_le_bytes()).map_err(io)?;
                    w.write_all(b).map_err(io)?;
                }
                CkptValue::F32(a) => {
                    write_dims(&mut w, 4, &a.shape).map_err(io)?;
                    for v in &a.data {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                CkptValue::F64(a) => {
                    write_dims(&mut w, 8, &a.shape).map_err(io)?;
                    for v in &a.data {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let bad = |msg: &str| SeldError::Format(format!("{}: {msg}", path.display()));
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != CKPT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r, path)?;
        if version != CKPT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let config_hash = read_u64(&mut r, path)?;
        let config_len = read_u32(&mut r, path)? as usize;
        let mut config = vec![0u8; config_len];
        read_exact(&mut r, &mut config, path)?;
        let config_text =
            String::from_utf8(config).map_err(|_| bad("config text is not UTF-8"))?;
        let n_entries = read_u32(&mut r, path)? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let mut lb = [0u8; 2];
            read_exact(&mut r, &mut lb, path)?;
            let name_len = u16::from_le_bytes(lb) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name, path)?;
            let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
            let mut hb = [0u8; 2];
            read_exact(&mut r, &mut hb, path)?;
            let (dtype, ndim) = (hb[0], hb[1] as usize);
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u32(&mut r, path)? as usize);
            }
            let numel: usize = dims.iter().product();
            let value = match dtype {
                0 => {
                    let mut b = vec![0u8; numel];
                    read_exact(&mut r, &mut b, path)?;
                    CkptValue::Bytes(b)
                }
                4 => {
                    let mut data = Vec::with_capacity(numel);
                    let mut buf = [0u8; 4];
                    for _ in 0..numel {
                        read_exact(&mut r, &mut buf, path)?;
                        data.push(f32::from_le_bytes(buf));
                    }
                    CkptValue::F32(Array::new(data, &dims)?)
                }
                8 => {
                    let mut data = Vec::with_capacity(numel);
                    let mut buf = [0u8; 8];
                    for _ in 0..numel {
                        read_exact(&mut r, &mut buf, path)?;
                        data.push(f64::from_le_bytes(buf));
                    }
                    CkptValue::F64(Array::new(data, &dims)?)
                }
                other => return Err(bad(&format!("unknown dtype tag {other}"))),
            };
            entries.push((name, value));
        }
        Ok(Checkpoint { config_hash, config_text, entries })
    }
}

fn write_dims<W: Write>(w: &mut W, dtype: u8, shape: &[usize]) -> std::io::Result<()> {
    w.write_all(&[dtype, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| SeldError::io(path.display().to_string(), e))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}
