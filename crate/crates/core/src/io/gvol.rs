use std::path::Path;

use super::{read_file, write_atomic, Reader};
use crate::error::{GlfcError, Result};

pub const GVOL_MAGIC: &[u8; 4] = b"GVL1";
pub const GVOL_DTYPE_F32: u32 = 1;

/// 2D or 3D image. `dims[0]` is x and varies fastest in `voxels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Vec<usize>,
    /// mm per axis
    pub spacing: [f32; 3],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Vec<usize>, voxels: Vec<f32>) -> Result<Self> {
        let v = Volume {
            dims,
            spacing: [1.0; 3],
            voxels,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims.len()) || self.dims.contains(&0) {
            return Err(GlfcError::shape(format!(
                "volume dims must be 2 or 3 positive extents, got {:?}",
                self.dims
            )));
        }
        if self.dims.iter().product::<usize>() != self.voxels.len() {
            return Err(GlfcError::shape(format!(
                "{} voxels for dims {:?}",
                self.voxels.len(),
                self.dims
            )));
        }
        if let Some(i) = self.voxels.iter().position(|v| !v.is_finite()) {
            return Err(GlfcError::shape(format!("voxel {i} is not finite")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    /// Number of 2D slices (1 for a 2D volume).
    pub fn slice_count(&self) -> usize {
        self.dims.get(2).copied().unwrap_or(1)
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.width() * self.height();
        &self.voxels[z * n..(z + 1) * n]
    }
}

pub fn encode_gvol(v: &Volume) -> Result<Vec<u8>> {
    v.validate()?;
    let mut out = Vec::with_capacity(28 + 4 * v.voxels.len());
    out.extend_from_slice(GVOL_MAGIC);
    out.extend_from_slice(&(v.dims.len() as u32).to_le_bytes());
    for &d in &v.dims {
        let d = u32::try_from(d).map_err(|_| GlfcError::shape(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&GVOL_DTYPE_F32.to_le_bytes());
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_gvol(bytes: &[u8]) -> Result<Volume> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != GVOL_MAGIC {
        return Err(GlfcError::format(0, "bad magic, expected \"GVL1\""));
    }
    let at = r.pos();
    let rank = r.u32("rank")?;
    if !(2..=3).contains(&rank) {
        return Err(GlfcError::format(at, format!("rank {rank} is not 2 or 3")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut count: usize = 1;
    for i in 0..rank {
        let at = r.pos();
        let d = r.u32("dimension")? as usize;
        if d == 0 {
            return Err(GlfcError::format(at, format!("dimension {i} is zero")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| GlfcError::format(at, "voxel count overflows"))?;
        dims.push(d);
    }
    let at = r.pos();
    let dtype = r.u32("dtype")?;
    if dtype != GVOL_DTYPE_F32 {
        return Err(GlfcError::format(at, format!("unknown dtype code {dtype}")));
    }
    let mut spacing = [0.0f32; 3];
    for s in &mut spacing {
        let at = r.pos();
        *s = r.f32("spacing")?;
        if !(s.is_finite() && *s > 0.0) {
            return Err(GlfcError::format(at, format!("spacing {s} is not positive")));
        }
    }
    let voxels = r.f32_payload(count, "voxel payload")?;
    r.finish()?;
    Ok(Volume { dims, spacing, voxels })
}

pub fn read_gvol(path: &Path) -> Result<Volume> {
    decode_gvol(&read_file(path)?)
}

pub fn write_gvol(path: &Path, v: &Volume) -> Result<()> {
    write_atomic(path, &encode_gvol(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_arithmetic() {
        let v = Volume::new(vec![256, 256], vec![0.0; 65536]).unwrap();
        assert_eq!(encode_gvol(&v).unwrap().len(), 262176);
    }

    #[test]
    fn bad_magic_at_zero() {
        let v = Volume::new(vec![7, 5], vec![1.5; 35]).unwrap();
        let mut b = encode_gvol(&v).unwrap();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_gvol(&b), Err(GlfcError::Format { offset: 0, .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let v = Volume::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let mut b = encode_gvol(&v).unwrap();
        let n = b.len() as u64;
        b.push(0);
        assert!(matches!(decode_gvol(&b), Err(GlfcError::Format { offset, .. }) if offset == n));
    }
}
