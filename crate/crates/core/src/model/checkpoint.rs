//! Checkpoint files: a header (format version, architecture fingerprint and
//! the architecture itself) followed by named tensors stored as shape plus
//! little-endian `f64` values.

use std::fs;
use std::path::Path;

use super::ArchConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ModelParams, Tensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FRCK";
const TENSORS_MAGIC: &[u8; 4] = b"FRPT";
const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(path: &Path, arch: &ArchConfig, params: &ModelParams<T>) -> Result<()> {
    arch.check_params(params)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&arch.fingerprint().to_le_bytes());
    let arch_json = serde_json::to_vec(arch)?;
    out.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch_json);
    encode_tensors(params, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(ArchConfig, ModelParams<T>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let fingerprint = r.u64()?;
    let arch_len = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(r.take(arch_len)?)?;
    if arch.fingerprint() != fingerprint {
        return Err(Error::Layout(format!(
            "checkpoint fingerprint {fingerprint:#018x} does not match its architecture ({:#018x})",
            arch.fingerprint()
        )));
    }
    let params = decode_tensors(&mut r)?;
    arch.check_params(&params)?;
    Ok((arch, params))
}

/// Writes a bare named-tensor file (no architecture header).
pub fn write_params_file<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSORS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    encode_tensors(params, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_params_file<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != TENSORS_MAGIC || r.u32()? != FORMAT_VERSION {
        return Err(Error::Format(format!("{}: not a tensor file", path.display())));
    }
    decode_tensors(&mut r)
}

fn encode_tensors<T: Scalar>(params: &ModelParams<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

fn decode_tensors<T: Scalar>(r: &mut Reader<'_>) -> Result<ModelParams<T>> {
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name =
            std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Format(format!("tensor name: {e}")))?.to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != r.buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    ModelParams::new(entries)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
