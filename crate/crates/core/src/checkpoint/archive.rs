//! Named parameter archive.
//!
//! ```text
//! b"FGPA" | u32 LE version | u64 LE header length | JSON header | f32 LE data
//! ```
//!
//! The header lists `{name, shape, buffer}` entries in module visit order;
//! data follows in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::nn::{Module, ParamKind};

const MAGIC: &[u8; 4] = b"FGPA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub buffer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub entry: Entry,
    pub values: Vec<f32>,
}

pub fn encode(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let header: Vec<&Entry> = tensors.iter().map(|t| &t.entry).collect();
    let json = serde_json::to_vec(&header).map_err(|e| Error::format("archive header", e))?;
    let total: usize = tensors.iter().map(|t| t.values.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        if t.values.len() != t.entry.shape.iter().product::<usize>() {
            return Err(Error::shape(format!("tensor {} does not match its shape", t.entry.name)));
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let bad = |d: &str| Error::format("parameter archive", d);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Vec<Entry> =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::format("archive header", e))?;
    let mut data = &body[hlen..];
    let mut out = Vec::with_capacity(header.len());
    for entry in header {
        let n: usize = entry.shape.iter().product();
        if data.len() < 4 * n {
            return Err(bad(&format!("truncated data for {}", entry.name)));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data = &data[4 * n..];
        out.push(Tensor { entry, values });
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn collect<M: Module<f32> + ?Sized>(module: &M) -> Vec<Tensor> {
    let mut out = Vec::new();
    module.visit("", &mut |name, p| {
        out.push(Tensor {
            entry: Entry {
                name: name.to_string(),
                shape: p.shape.clone(),
                buffer: p.kind == ParamKind::Buffer,
            },
            values: p.value.clone(),
        })
    });
    out
}

/// FNV-1a hash over every parameter value in visit order.
pub fn digest<M: Module<f32> + ?Sized>(module: &M) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    module.visit("", &mut |_, p| {
        for v in &p.value {
            for b in v.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    });
    h
}

/// Overwrite every parameter of `module` from `tensors`; names and shapes
/// must match exactly.
pub fn assign<M: Module<f32> + ?Sized>(module: &mut M, tensors: &[Tensor]) -> Result<()> {
    let mut err = None;
    let mut i = 0;
    module.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match tensors.get(i) {
            Some(t) if t.entry.name == name && t.entry.shape == p.shape => {
                p.value.copy_from_slice(&t.values);
            }
            Some(t) => {
                err = Some(Error::format(
                    "parameter archive",
                    format!(
                        "expected {name} {:?}, found {} {:?}",
                        p.shape, t.entry.name, t.entry.shape
                    ),
                ))
            }
            None => err = Some(Error::format("parameter archive", format!("missing {name}"))),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != tensors.len() {
        return Err(Error::format(
            "parameter archive",
            format!("{} extra tensors", tensors.len() - i),
        ));
    }
    Ok(())
}

pub fn save<M: Module<f32> + ?Sized>(module: &M, path: &Path) -> Result<()> {
    imageio::write_file(path, &encode(&collect(module))?)
}

pub fn read(path: &Path) -> Result<Vec<Tensor>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_into<M: Module<f32> + ?Sized>(module: &mut M, path: &Path) -> Result<()> {
    assign(module, &read(path)?)
}
