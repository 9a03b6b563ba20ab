//! C interface: load a checkpoint, complete depth for a frame, run the
//! nearest-fill baseline and score predictions.
//!
//! Every call returns a [`DcompStatus`]; on failure the message is kept per
//! thread and read back with [`dcomp_last_error`]. Images are planar
//! `3×H×W` floats in `[0, 1]`, depth maps `H×W` metres with 0 for missing.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dcomp::data::SparseDepthMap;
use dcomp::evaluation::{compute_metrics, nn_fill_baseline, EvalError};
use dcomp::network::{load_checkpoint, predict_depth, NetworkConfig, NetworkError, ParameterStore};
use dcomp::tensor::Tensor;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcompStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    Panic = 6,
}

/// Loaded network; create with [`dcomp_model_load`], release with
/// [`dcomp_model_free`].
pub struct DcompModel {
    config: NetworkConfig,
    store: ParameterStore<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DcompMetrics {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub abs_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub pixels: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(DcompStatus, String);

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        let status = match e {
            NetworkError::Io(..) => DcompStatus::Io,
            NetworkError::Config(_) | NetworkError::Resolution { .. } => DcompStatus::InvalidArgument,
            NetworkError::Tensor(_) => DcompStatus::Numerical,
            _ => DcompStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::NonPositivePrediction { .. } => DcompStatus::Numerical,
            EvalError::Shape { .. } => DcompStatus::InvalidArgument,
            _ => DcompStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DcompStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DcompStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DcompStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DcompStatus::NullPointer, format!("{what} is null"))
}

fn pixels(width: u32, height: u32) -> Result<usize, Failure> {
    if width == 0 || height == 0 {
        return Err(Failure(DcompStatus::InvalidArgument, format!("empty image {width}x{height}")));
    }
    Ok(width as usize * height as usize)
}

/// # Safety
/// `ptr` must be null or point to `len` readable floats.
unsafe fn slice<'a>(ptr: *const f32, len: usize, what: &str) -> Result<&'a [f32], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn sparse_map(width: u32, height: u32, data: &[f32]) -> Result<SparseDepthMap, Failure> {
    SparseDepthMap::new(width as usize, height as usize, data.to_vec()).map_err(|e| Failure(DcompStatus::InvalidArgument, e.to_string()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn dcomp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dcomp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dcomp_model_load(path: *const c_char, out: *mut *mut DcompModel) -> DcompStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(DcompStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let (config, store) = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(DcompModel { config, store }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`dcomp_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dcomp_model_free(model: *mut DcompModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars, 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcomp_model_parameter_count(model: *const DcompModel) -> u64 {
    model.as_ref().map_or(0, |m| m.store.scalar_count() as u64)
}

/// Image sides must be multiples of this.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcomp_model_resolution_factor(model: *const DcompModel) -> u32 {
    model.as_ref().map_or(0, |m| m.config.resolution_factor() as u32)
}

/// Dense metric depth for one frame.
///
/// # Safety
/// `rgb` must hold `3·width·height` floats, `sparse` and `out_depth`
/// `width·height` floats each.
#[no_mangle]
pub unsafe extern "C" fn dcomp_complete(
    model: *const DcompModel,
    width: u32,
    height: u32,
    rgb: *const f32,
    sparse: *const f32,
    out_depth: *mut f32,
) -> DcompStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let n = pixels(width, height)?;
        let rgb = slice(rgb, 3 * n, "rgb")?;
        let sparse = sparse_map(width, height, slice(sparse, n, "sparse")?)?;
        if out_depth.is_null() {
            return Err(null("out_depth"));
        }
        let (h, w) = (height as usize, width as usize);
        let image = Tensor::from_vec(vec![1, 3, h, w], rgb.to_vec()).map_err(|e| Failure(DcompStatus::InvalidArgument, e.to_string()))?;
        let depth = predict_depth(&model.config, &model.store, &image, &sparse.to_tensor())?;
        if !depth.all_finite() {
            return Err(Failure(DcompStatus::Numerical, "prediction is not finite".into()));
        }
        std::slice::from_raw_parts_mut(out_depth, n).copy_from_slice(depth.data());
        Ok(())
    })
}

/// Fills every pixel with the depth of its nearest valid sparse pixel.
///
/// # Safety
/// `sparse` and `out_depth` must hold `width·height` floats.
#[no_mangle]
pub unsafe extern "C" fn dcomp_nn_fill(width: u32, height: u32, sparse: *const f32, out_depth: *mut f32) -> DcompStatus {
    guard(|| {
        let n = pixels(width, height)?;
        let sparse = sparse_map(width, height, slice(sparse, n, "sparse")?)?;
        if out_depth.is_null() {
            return Err(null("out_depth"));
        }
        let filled = nn_fill_baseline(&sparse)?;
        std::slice::from_raw_parts_mut(out_depth, n).copy_from_slice(filled.data());
        Ok(())
    })
}

/// Scores `pred` against `gt` over pixels where `gt > 0`.
///
/// # Safety
/// `pred` and `gt` must hold `width·height` floats, `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dcomp_metrics(width: u32, height: u32, pred: *const f32, gt: *const f32, out: *mut DcompMetrics) -> DcompStatus {
    guard(|| {
        let n = pixels(width, height)?;
        let pred = slice(pred, n, "pred")?;
        let gt = sparse_map(width, height, slice(gt, n, "gt")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = Tensor::from_vec(vec![n], pred.to_vec()).map_err(|e| Failure(DcompStatus::InvalidArgument, e.to_string()))?;
        let r = compute_metrics(&t, &gt)?;
        *out = DcompMetrics {
            rmse_mm: r.rmse,
            mae_mm: r.mae,
            abs_rel: r.abs_rel,
            delta1: r.delta1,
            delta2: r.delta2,
            delta3: r.delta3,
            irmse_per_km: r.irmse,
            imae_per_km: r.imae,
            pixels: r.pixels as u64,
        };
        Ok(())
    })
}
