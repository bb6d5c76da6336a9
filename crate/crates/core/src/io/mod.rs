//! Volume and checkpoint files, key=value text files and atomic writes.

mod checkpoint;
mod gvol;
mod kv;

pub use checkpoint::{
    arch_from_text, arch_path, arch_to_text, checkpoint_size, decode_checkpoint, encode_checkpoint, load_checkpoint,
    read_arch, save_checkpoint, write_arch, CheckpointRecord, CKPT_MAGIC,
};
pub use gvol::{decode_gvol, encode_gvol, read_gvol, write_gvol, Volume, GVOL_DTYPE_F32, GVOL_MAGIC};
pub use kv::{parse_kv, KvMap};

use std::io::Write;
use std::path::Path;

use crate::error::{GlfcError, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| GlfcError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| GlfcError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| GlfcError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| GlfcError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GlfcError::io(path, e))
}

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn pos(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(GlfcError::format(
                self.bytes.len() as u64,
                format!("truncated {what}: need {n} bytes at offset {}, file ends", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    /// Reads `n` finite f32 values.
    pub fn f32_payload(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| GlfcError::format(start as u64, "payload size overflows"))?, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(GlfcError::format((start + 4 * i) as u64, format!("non-finite value in {what}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(GlfcError::format(
                self.pos(),
                format!("{} unexpected trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}
