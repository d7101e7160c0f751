//! Versioned binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RCLP"  u16 version
//! u32 meta_count   { u16 key_len, key, u32 val_len, val }*
//! u32 tensor_count { u16 name_len, name, u8 dtype, u8 rank, u32 extent*rank, payload }*
//! ```
//!
//! `dtype` 0 is f32, 1 is f64; payloads are raw little-endian values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::{DType, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCLP";
pub const FORMAT_VERSION: u16 = 1;

/// Ordered key/value header entries.
pub type Meta = Vec<(String, String)>;

pub fn meta_get<'a>(meta: &'a Meta, key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn encode(params: &ParamSet<f32>, meta: &Meta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        out.extend_from_slice(&(k.len() as u16).to_le_bytes());
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DType::F32 as u8);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", "non-utf8 string"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamSet<f32>, Meta)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let mut meta = Meta::new();
    for _ in 0..c.u32()? {
        let kl = c.u16()? as usize;
        let k = c.string(kl)?;
        let vl = c.u32()? as usize;
        meta.push((k, c.string(vl)?));
    }
    let mut params = ParamSet::new();
    for _ in 0..c.u32()? {
        let nl = c.u16()? as usize;
        let name = c.string(nl)?;
        let dtype = c.u8()?;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match dtype {
            0 => c.take(4 * n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
            1 => c
                .take(8 * n)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
                .collect(),
            t => return Err(Error::format("checkpoint", format!("unknown dtype tag {t}"))),
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok((params, meta))
}

/// Write `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|f| f.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save(path: &Path, params: &ParamSet<f32>, meta: &Meta) -> Result<()> {
    write_atomic(path, &encode(params, meta))
}

pub fn load(path: &Path) -> Result<(ParamSet<f32>, Meta)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
