//! Binary model file.
//!
//! ```text
//! magic "NRMNMLP\0" | u16 version | u8 level | u64 probe hash
//! u32 dims[4] | f64 dropout | f64 shift[d] | f64 scale[d]
//! per layer: f64 weights[out*in] | f64 bias[out]
//! u32 crc32 of everything above
//! ```
//! All integers and floats are little-endian.

use std::io::Write;
use std::path::Path;

use super::model::{Layer, MlpModel};
use crate::spectral::ProbeSet;
use crate::util::write_atomic;
use crate::{Error, Level, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"NRMNMLP\0";
pub const MODEL_VERSION: u16 = 1;

/// Widths above this are treated as corruption.
const MAX_WIDTH: u32 = 4096;

fn encode(model: &MlpModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 8 * model.param_count());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.push(model.level.tag());
    buf.extend_from_slice(&model.probe_hash.to_le_bytes());
    for d in model.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let floats = std::iter::once(model.dropout)
        .chain(model.input_shift.iter().copied())
        .chain(model.input_scale.iter().copied())
        .chain(model.params());
    for f in floats {
        buf.extend_from_slice(&f.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(model);
    write_atomic(path.as_ref(), |w| Ok(w.write_all(&bytes)?))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(v)
    }
}

fn decode(bytes: &[u8]) -> Result<MlpModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported model version {version}")));
    }
    let level = Level::from_tag(c.u8()?).ok_or_else(|| Error::ModelFormat("unknown level tag".into()))?;
    let probe_hash = c.u64()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let v = c.u32()?;
        if v == 0 || v > MAX_WIDTH {
            return Err(Error::ModelFormat(format!("layer width {v} out of range")));
        }
        *d = v as usize;
    }
    if dims[0] != level.dim() || dims[3] != 1 {
        return Err(Error::ModelFormat(format!(
            "dimension table {dims:?} inconsistent with level {level} (input {}, output 1)",
            level.dim()
        )));
    }
    let body_len = 8 * (1 + 2 * dims[0] + (0..3).map(|i| dims[i] * dims[i + 1] + dims[i + 1]).sum::<usize>());
    let expected_len = c.pos + body_len + 4;
    if bytes.len() != expected_len {
        return Err(Error::ModelFormat(format!(
            "file is {} bytes, dimension table implies {expected_len}",
            bytes.len()
        )));
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != stored_crc {
        return Err(Error::ModelFormat("checksum mismatch".into()));
    }
    let dropout = c.f64s(1)?[0];
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::ModelFormat(format!("dropout {dropout} out of range")));
    }
    let shift = c.f64s(dims[0])?;
    let scale = c.f64s(dims[0])?;
    let mut layer = |i: usize| -> Result<Layer> {
        Ok(Layer {
            inputs: dims[i],
            outputs: dims[i + 1],
            weights: c.f64s(dims[i] * dims[i + 1])?,
            bias: c.f64s(dims[i + 1])?,
        })
    };
    let layers = [layer(0)?, layer(1)?, layer(2)?];
    Ok(MlpModel { level, layers, input_shift: shift, input_scale: scale, dropout, probe_hash })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let bytes = std::fs::read(path.as_ref())?;
    decode(&bytes)
}

/// Loads a model and refuses it unless it was trained against `probes`.
pub fn load_model_checked(path: impl AsRef<Path>, probes: &ProbeSet) -> Result<MlpModel> {
    let model = load_model(path)?;
    model.ensure_probes(probes)?;
    Ok(model)
}
