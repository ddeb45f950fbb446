//! Versioned binary checkpoint archive.
//!
//! Layout: magic `FCCK`, format version (u32 LE), JSON metadata block
//! (model kind, iteration, counters, optimizer step counts, full config
//! echo), then named f32 tensor sections. Spectral states (u, v, sigma per
//! wrapped layer) ride along as ordinary sections so resumed runs continue
//! the same power-iteration trajectory.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FCCK";
pub const FORMAT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub format_version: u32,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, arr: ArrayD<f32>) {
        self.arrays.push((name.into(), arr));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayD<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))
    }

    pub fn meta_str(&self, key: &str) -> Result<String> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key '{key}'")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key '{key}'")))
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(ckpt.format_version)?;
    let meta = serde_json::to_vec(&ckpt.meta)
        .map_err(|e| Error::Checkpoint(format!("meta serialize: {e}")))?;
    w.write_u64::<LittleEndian>(meta.len() as u64)?;
    w.write_all(&meta)?;
    w.write_u32::<LittleEndian>(ckpt.arrays.len() as u32)?;
    for (name, arr) in &ckpt.arrays {
        let nb = name.as_bytes();
        w.write_u16::<LittleEndian>(nb.len() as u16)?;
        w.write_all(nb)?;
        w.write_u8(arr.ndim() as u8)?;
        for d in arr.shape() {
            w.write_u64::<LittleEndian>(*d as u64)?;
        }
        let flat = arr
            .as_standard_layout()
            .iter()
            .cloned()
            .collect::<Vec<f32>>();
        w.write_u64::<LittleEndian>(flat.len() as u64)?;
        for v in flat {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {path:?}: {e}")))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{path:?} is not a checkpoint archive")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let meta_len = r.read_u64::<LittleEndian>()? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf)?;
    let meta = serde_json::from_slice(&meta_buf)
        .map_err(|e| Error::Checkpoint(format!("meta parse: {e}")))?;
    let n_arrays = r.read_u32::<LittleEndian>()?;
    let mut arrays = Vec::with_capacity(n_arrays as usize);
    for _ in 0..n_arrays {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::Checkpoint(format!("bad section name: {e}")))?;
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let len = r.read_u64::<LittleEndian>()? as usize;
        let expected: usize = shape.iter().product();
        if len != expected {
            return Err(Error::Checkpoint(format!(
                "section '{name}': length {len} does not match shape {shape:?}"
            )));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LittleEndian>()?);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("section '{name}': {e}")))?;
        arrays.push((name, arr));
    }
    Ok(Checkpoint {
        format_version: version,
        meta,
        arrays,
    })
}
