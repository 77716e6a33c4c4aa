//! Parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "EACKPT01"
//! version      u32      1
//! config_hash  u64      FNV-1a of the model config text below
//! seed         u64
//! config_len   u64, then config_len bytes of UTF-8 `key = value` text
//! count        u64      number of parameters
//! per parameter, in model order:
//!   name_len u32, name bytes (UTF-8)
//!   ndim u32, ndim × u64 dims
//!   prod(dims) × f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::predictor::{fnv1a, Model, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"EACKPT01";
const VERSION: u32 = 1;

pub fn write(out: &mut impl Write, model: &Model, seed: u64) -> Result<()> {
    let text = model.config.canonical();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&fnv1a(text.as_bytes()).to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    out.write_all(&(text.len() as u64).to_le_bytes())?;
    out.write_all(text.as_bytes())?;
    out.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (name, t) in model.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(bad("truncated"));
        }
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(u64::from_le_bytes(b))
    }

    fn len(&mut self, limit: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(bad(format!("length {v} exceeds {limit}")));
        }
        Ok(v as usize)
    }
}

/// Checkpoint contents: the model and the seed it was trained with.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub model: Model,
    pub seed: u64,
}

pub fn read(input: &mut impl Read) -> Result<Loaded> {
    let mut r = Reader { inner: input };
    if r.bytes(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let seed = r.u64()?;
    let len = r.len(1 << 20)?;
    let text = String::from_utf8(r.bytes(len)?).map_err(|_| bad("config text is not UTF-8"))?;
    if fnv1a(text.as_bytes()) != hash {
        return Err(bad("config hash mismatch"));
    }
    let config = ModelConfig::from_canonical(&text)?;
    let count = r.len(1 << 20)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(bad("parameter name too long"));
        }
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| bad("parameter name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(bad(format!("{name}: {ndim} dimensions")));
        }
        let dims = (0..ndim).map(|_| r.len(1 << 32)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= 1 << 31);
        let n = n.ok_or_else(|| bad(format!("{name}: shape {dims:?} too large")))?;
        let raw = r.bytes(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        params.insert(&name, Tensor::new(&dims, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(Loaded {
        model: Model::from_params(config, params)?,
        seed,
    })
}

pub fn save(path: &Path, model: &Model, seed: u64) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf, model, seed)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path)?;
    read(&mut bytes.as_slice())
}
