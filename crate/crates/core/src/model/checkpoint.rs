use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{CtcGmmModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGMM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor)>,
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in 32 bits")))
}

/// Layout: magic, `u32` version, `u32` config length, config text, then per
/// tensor `u32` name length, name, `u32` rank, `u32` dims, `f32` values.
/// All integers and floats are little-endian.
pub fn save_checkpoint(path: &Path, model: &CtcGmmModel) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = model.config().to_kv_string();
    w.write_all(&u32_of(cfg.len(), "config length")?.to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    for (name, t) in model.store().iter() {
        w.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.shape().len(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = c.u32("config length")?;
    let text = std::str::from_utf8(c.take(n, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = ModelConfig::from_kv_str(text, path)?;
    let mut tensors = Vec::new();
    while c.pos < buf.len() {
        let n = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(n, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")?);
        }
        let count: usize = shape.iter().product();
        let bytes = c.take(count * 4, &name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { config, tensors })
}

/// Rebuilds the model described by the checkpoint and loads its weights.
pub fn load_checkpoint(path: &Path) -> Result<CtcGmmModel> {
    let ckpt = read_checkpoint(path)?;
    let mut model = CtcGmmModel::new(ckpt.config)?;
    let expected = model.store().len();
    if ckpt.tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {expected}",
            ckpt.tensors.len()
        )));
    }
    for (name, t) in ckpt.tensors {
        let id = model
            .store()
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        let slot = model.store_mut().get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(model)
}
