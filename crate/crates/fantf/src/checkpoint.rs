//! Binary model checkpoints.
//!
//! Layout: the magic `FANTF1`, a u32-length-prefixed UTF-8 block of
//! `key=value` model-configuration lines, a u32 parameter count, then per
//! parameter a u32-length-prefixed name, a u32 rank, u64 extents and the
//! raw f64 data. All integers and floats are little-endian; a save/load
//! round trip reproduces every parameter bit for bit.

use std::path::Path;

use crate::config::{model_config_from_kv, model_config_to_kv};
use crate::error::{FantfError, Result};
use crate::model::Model;
use crate::rng::RngState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"FANTF1";

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let config = model_config_to_kv(&model.config);
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // write-then-rename so a crash cannot leave a half-written checkpoint
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(FantfError::Data(format!(
                "{}: checkpoint truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path).map_err(|e| FantfError::io_at(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(FantfError::Data(format!(
            "{}: not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let config_len = r.take_u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| {
            FantfError::Data(format!(
                "{}: checkpoint configuration is not UTF-8",
                path.display()
            ))
        })?
        .to_string();
    let config = model_config_from_kv(&config_text)?;

    // the architecture comes from the stored config; every weight is then
    // overwritten, so the init seed is irrelevant
    let mut model = Model::init(config, &mut RngState::new(0))?;
    let n_params = r.take_u32()? as usize;
    let mut slots = model.params_mut();
    if n_params != slots.len() {
        return Err(FantfError::Data(format!(
            "{}: checkpoint holds {n_params} parameters, the architecture has {}",
            path.display(),
            slots.len()
        )));
    }
    for (name, slot) in slots.iter_mut() {
        let name_len = r.take_u32()? as usize;
        let stored_name = std::str::from_utf8(r.take(name_len)?).unwrap_or("<invalid>");
        if stored_name != name.as_str() {
            return Err(FantfError::Data(format!(
                "{}: expected parameter '{name}', found '{stored_name}'",
                path.display()
            )));
        }
        let rank = r.take_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.take_u64()? as usize);
        }
        if shape != slot.shape() {
            return Err(FantfError::Data(format!(
                "{}: parameter '{name}' has shape {shape:?}, expected {:?}",
                path.display(),
                slot.shape()
            )));
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let bytes = r.take(8)?;
            data.push(f64::from_le_bytes(bytes.try_into().unwrap()));
        }
        **slot = Tensor::param(&shape, data)?;
    }
    if r.pos != buf.len() {
        return Err(FantfError::Data(format!(
            "{}: {} trailing bytes after the last parameter",
            path.display(),
            buf.len() - r.pos
        )));
    }
    Ok(model)
}
