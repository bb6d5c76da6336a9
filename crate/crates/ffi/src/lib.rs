//! C ABI over `glfc`.
//!
//! Every fallible function returns a [`GlfcStatus`]; on failure the message
//! is kept per thread and can be copied out with [`glfc_last_error`].
//! Volumes and models are opaque handles released with their `_free`
//! function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use glfc::io::{load_checkpoint, read_arch, read_gvol, write_gvol, Volume};
use glfc::losses::{hu_to_norm, mcl_loss, norm_to_hu};
use glfc::metrics::{evaluate_pair, MetricConfig};
use glfc::model::Meunet;
use glfc::train::infer_volume;
use glfc::{GlfcError, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlfcStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    Config = 2,
    /// Dataset, file format, checkpoint or shape problem.
    Data = 3,
    Io = 4,
    /// Evaluation could not be computed (e.g. empty body mask).
    Evaluation = 5,
    /// Internal contract violation or caught panic.
    Internal = 6,
}

/// Opaque volume handle.
pub struct GlfcVolume(Volume);

/// Opaque model handle.
pub struct GlfcModel(Meunet<f32>);

/// Loss terms of one evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlfcMclValues {
    pub total: f64,
    pub glob: f64,
    pub soft: f64,
    pub bone: f64,
}

/// Scores for one region; `voxels == 0` means the region was empty and the
/// other fields are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlfcRegionScore {
    /// Fraction in `[0, 1]`.
    pub ssim: f64,
    /// dB; `+inf` when prediction and reference agree exactly.
    pub psnr: f64,
    pub mae_hu: f64,
    pub voxels: usize,
}

/// Full body, soft tissue, bone.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlfcMetrics {
    pub full: GlfcRegionScore,
    pub soft_tissue: GlfcRegionScore,
    pub bone: GlfcRegionScore,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &GlfcError) -> GlfcStatus {
    match e {
        GlfcError::Config(_) => GlfcStatus::Config,
        GlfcError::Dataset(_) | GlfcError::Format { .. } | GlfcError::Checkpoint { .. } | GlfcError::Shape(_) => {
            GlfcStatus::Data
        }
        GlfcError::Evaluation(_) => GlfcStatus::Evaluation,
        GlfcError::Io { .. } => GlfcStatus::Io,
        GlfcError::Contract(_) => GlfcStatus::Internal,
    }
}

enum Fail {
    Arg(&'static str),
    Lib(GlfcError),
}

impl From<GlfcError> for Fail {
    fn from(e: GlfcError) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GlfcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            GlfcStatus::Ok
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m.to_string());
            GlfcStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GlfcStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Arg(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Arg(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies the calling thread's last error message (NUL terminated,
/// truncated to `len - 1` bytes) into `buf`. Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn glfc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// HU → normalized `[-1, 1]` (input clipped to `[-1024, 3000]`).
#[no_mangle]
pub extern "C" fn glfc_hu_to_norm(hu: f64) -> f64 {
    hu_to_norm(hu)
}

/// Normalized → HU (input clipped to `[-1, 1]`).
#[no_mangle]
pub extern "C" fn glfc_norm_to_hu(v: f64) -> f64 {
    norm_to_hu(v)
}

/// Multiple contrast loss of two normalized buffers of `n` values.
///
/// # Safety
/// `pred` and `reference` must point to `n` readable doubles and `out` to a
/// writable [`GlfcMclValues`].
#[no_mangle]
pub unsafe extern "C" fn glfc_mcl_loss(
    pred: *const f64,
    reference: *const f64,
    n: usize,
    out: *mut GlfcMclValues,
) -> GlfcStatus {
    guard(|| {
        let p = slice_arg(pred, n, "pred is null")?;
        let y = slice_arg(reference, n, "reference is null")?;
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        if n == 0 {
            return Err(GlfcError::Shape("empty buffers".into()).into());
        }
        let l = mcl_loss(&Tensor::new(&[n], p.to_vec())?, &Tensor::new(&[n], y.to_vec())?)?;
        let [total, glob, soft, bone] = l.values();
        *out = GlfcMclValues { total, glob, soft, bone };
        Ok(())
    })
}

/// Creates a volume from `rank` (2 or 3) extents, fastest axis first, and
/// their HU voxels.
///
/// # Safety
/// `dims` must point to `rank` values, `voxels` to their product of floats,
/// `out` to a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_new(
    dims: *const usize,
    rank: usize,
    voxels: *const f32,
    out: *mut *mut GlfcVolume,
) -> GlfcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        let d = slice_arg(dims, rank, "dims is null")?.to_vec();
        let n = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or(Fail::Arg("dims overflow"))?;
        let v = slice_arg(voxels, n, "voxels is null")?.to_vec();
        *out = Box::into_raw(Box::new(GlfcVolume(Volume::new(d, v)?)));
        Ok(())
    })
}

/// Reads a GVOL file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_read(path: *const c_char, out: *mut *mut GlfcVolume) -> GlfcStatus {
    guard(|| {
        let p = path_arg(path, "path is null or not UTF-8")?;
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        *out = Box::into_raw(Box::new(GlfcVolume(read_gvol(&p)?)));
        Ok(())
    })
}

/// Writes a GVOL file atomically.
///
/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_write(vol: *const GlfcVolume, path: *const c_char) -> GlfcStatus {
    guard(|| {
        let v = vol.as_ref().ok_or(Fail::Arg("volume is null"))?;
        let p = path_arg(path, "path is null or not UTF-8")?;
        write_gvol(&p, &v.0)?;
        Ok(())
    })
}

/// Number of axes; 0 for a null handle.
///
/// # Safety
/// `vol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_rank(vol: *const GlfcVolume) -> usize {
    vol.as_ref().map_or(0, |v| v.0.dims.len())
}

/// Extent of axis `axis`; 0 when out of range or null.
///
/// # Safety
/// `vol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_dim(vol: *const GlfcVolume, axis: usize) -> usize {
    vol.as_ref().and_then(|v| v.0.dims.get(axis).copied()).unwrap_or(0)
}

/// Borrowed pointer to the voxels, valid until the handle is freed.
///
/// # Safety
/// `vol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_data(vol: *const GlfcVolume, len: *mut usize) -> *const f32 {
    match vol.as_ref() {
        Some(v) => {
            if !len.is_null() {
                *len = v.0.voxels.len();
            }
            v.0.voxels.as_ptr()
        }
        None => {
            if !len.is_null() {
                *len = 0;
            }
            ptr::null()
        }
    }
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glfc_volume_free(vol: *mut GlfcVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Loads a checkpoint and its `.arch` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn glfc_model_load(path: *const c_char, out: *mut *mut GlfcModel) -> GlfcStatus {
    guard(|| {
        let p = path_arg(path, "path is null or not UTF-8")?;
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        let arch = read_arch(&p)?;
        *out = Box::into_raw(Box::new(GlfcModel(load_checkpoint(&p, Some(&arch))?)));
        Ok(())
    })
}

/// Learnable scalar count; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glfc_model_param_count(model: *const GlfcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// CBCT (HU) → synthetic CT (HU), same dims as the input.
///
/// # Safety
/// `model` and `cbct` must be live handles and `out` a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn glfc_model_infer(
    model: *const GlfcModel,
    cbct: *const GlfcVolume,
    out: *mut *mut GlfcVolume,
) -> GlfcStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Arg("model is null"))?;
        let v = cbct.as_ref().ok_or(Fail::Arg("volume is null"))?;
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        *out = Box::into_raw(Box::new(GlfcVolume(infer_volume(&m.0, &v.0)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glfc_model_free(model: *mut GlfcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Masked SSIM / PSNR / MAE of `pred` against `reference` (both HU).
///
/// # Safety
/// `pred` and `reference` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glfc_evaluate(
    pred: *const GlfcVolume,
    reference: *const GlfcVolume,
    out: *mut GlfcMetrics,
) -> GlfcStatus {
    guard(|| {
        let p = pred.as_ref().ok_or(Fail::Arg("pred is null"))?;
        let r = reference.as_ref().ok_or(Fail::Arg("reference is null"))?;
        if out.is_null() {
            return Err(Fail::Arg("out is null"));
        }
        let m = evaluate_pair(&p.0, &r.0, &MetricConfig::default())?;
        let score = |i: usize| match &m.regions[i] {
            Some(s) => GlfcRegionScore {
                ssim: s.ssim,
                psnr: s.psnr,
                mae_hu: s.mae_hu,
                voxels: s.voxels,
            },
            None => GlfcRegionScore {
                ssim: f64::NAN,
                psnr: f64::NAN,
                mae_hu: f64::NAN,
                voxels: 0,
            },
        };
        *out = GlfcMetrics {
            full: score(0),
            soft_tissue: score(1),
            bone: score(2),
        };
        Ok(())
    })
}
