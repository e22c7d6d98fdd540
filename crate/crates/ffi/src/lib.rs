//! C interface to the `lcdnet` library.
//!
//! Every function returns an [`LcdStatus`]; on failure a message is kept per
//! thread and can be read with [`lcd_last_error`]. Models are opaque
//! [`LcdModel`] handles created by `lcd_model_new`/`lcd_model_load` and
//! released with `lcd_model_free`.
//!
//! Images are planar RGB `f64` arrays of length `3 * height * width` with
//! values in `[0, 1]`. Density maps are row-major `f64` arrays; a model
//! output for an `h x w` image has `ceil(h / 2) * ceil(w / 2)` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lcdnet::groundtruth::{downscale_target, render_density, DensityConfig, DotMap};
use lcdnet::metrics::{game, mae, psnr, ssim, GridSetting, SsimConfig};
use lcdnet::model::{complexity_report, init_params, load_checkpoint, save_checkpoint, ModelParams};
use lcdnet::numerics::Tensor;
use lcdnet::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct LcdModel {
    params: ModelParams,
}

/// Cost of one forward pass.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LcdComplexity {
    pub param_count: u64,
    pub mac_count: u64,
    /// Parameter storage at 4 bytes per value.
    pub model_bytes: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LcdStatus {
    match e {
        Error::Dimension(_) => LcdStatus::Dimension,
        Error::Config(_)
        | Error::Range(_)
        | Error::Annotation { .. }
        | Error::Generation(_)
        | Error::Scoring { .. } => LcdStatus::Config,
        Error::Io { .. } | Error::Load { .. } => LcdStatus::Io,
        Error::Checkpoint { .. } => LcdStatus::Checkpoint,
        Error::Training(_) | Error::NonFiniteLoss { .. } => LcdStatus::Numeric,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (LcdStatus, String)>) -> LcdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LcdStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LcdStatus::Panic
        }
    }
}

type FfiResult<T> = Result<T, (LcdStatus, String)>;

fn lib<T>(r: lcdnet::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LcdStatus, String) {
    (LcdStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (LcdStatus, String) {
    (LcdStatus::InvalidArgument, msg.into())
}

fn product(parts: &[usize]) -> FfiResult<usize> {
    parts.iter().try_fold(1usize, |acc, &p| acc.checked_mul(p)).ok_or_else(|| invalid("array extent overflows"))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, need: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(invalid(format!("`{what}` holds {len} values but {need} are required")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

unsafe fn c_path<'a>(ptr: *const c_char) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn handle<'a>(ptr: *const LcdModel) -> FfiResult<&'a LcdModel> {
    ptr.as_ref().ok_or_else(|| null("model"))
}

unsafe fn map_arg(ptr: *const f64, height: usize, width: usize, what: &str) -> FfiResult<Tensor> {
    let data = slice(ptr, product(&[height, width])?, what)?;
    lib(Tensor::new(vec![1, 1, height, width], data.to_vec()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn lcd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lcd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a model with Gaussian-initialised weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_new(seed: u64, out: *mut *mut LcdModel) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(LcdModel { params: init_params(seed) }));
        Ok(())
    })
}

/// Loads a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_load(path: *const c_char, out: *mut *mut LcdModel) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = lib(load_checkpoint(c_path(path)?))?;
        *out = Box::into_raw(Box::new(LcdModel { params }));
        Ok(())
    })
}

/// Writes a checkpoint atomically.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_save(model: *const LcdModel, path: *const c_char) -> LcdStatus {
    guard(|| {
        let m = handle(model)?;
        lib(save_checkpoint(&m.params, c_path(path)?))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_free(model: *mut LcdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_param_count(model: *const LcdModel) -> u64 {
    model.as_ref().map_or(0, |m| m.params.param_count() as u64)
}

/// Parameter, MAC and size accounting for an `height x width` input.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_complexity(
    model: *const LcdModel,
    height: usize,
    width: usize,
    out: *mut LcdComplexity,
) -> LcdStatus {
    guard(|| {
        let m = handle(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lib(complexity_report(m.params.manifest(), height, width, 4))?;
        *out = LcdComplexity {
            param_count: r.param_count as u64,
            mac_count: r.mac_count,
            model_bytes: r.model_bytes as u64,
        };
        Ok(())
    })
}

/// Extent of the density map produced for an `height x width` image.
///
/// # Safety
/// `out_height` and `out_width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_output_size(
    height: usize,
    width: usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> LcdStatus {
    guard(|| {
        if out_height.is_null() || out_width.is_null() {
            return Err(null("out_height/out_width"));
        }
        *out_height = height.div_ceil(2);
        *out_width = width.div_ceil(2);
        Ok(())
    })
}

/// Runs the network on one planar RGB image. `out` must hold at least
/// `ceil(height / 2) * ceil(width / 2)` values (`out_len`).
///
/// # Safety
/// `image` must point to `3 * height * width` readable values and `out` to
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_forward(
    model: *const LcdModel,
    image: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> LcdStatus {
    guard(|| {
        let m = handle(model)?;
        let pixels = slice(image, product(&[3, height, width])?, "image")?;
        let input = lib(Tensor::new(vec![1, 3, height, width], pixels.to_vec()))?;
        let density = lib(m.params.forward(&input))?;
        out_slice(out, out_len, density.len(), "out")?.copy_from_slice(density.data());
        Ok(())
    })
}

/// Predicted object count for one planar RGB image.
///
/// # Safety
/// As for [`lcd_model_forward`]; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_model_count(
    model: *const LcdModel,
    image: *const f64,
    height: usize,
    width: usize,
    count: *mut f64,
) -> LcdStatus {
    guard(|| {
        let m = handle(model)?;
        if count.is_null() {
            return Err(null("count"));
        }
        let pixels = slice(image, product(&[3, height, width])?, "image")?;
        let input = lib(Tensor::new(vec![1, 3, height, width], pixels.to_vec()))?;
        *count = lib(m.params.forward(&input))?.sum();
        Ok(())
    })
}

/// Renders a full-resolution density map from `n_points` interleaved
/// `(x, y)` pairs with a fixed kernel width. `out` receives
/// `height * width` values.
///
/// # Safety
/// `points` must hold `2 * n_points` values (it may be null when
/// `n_points` is 0) and `out` `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lcd_render_density_fixed(
    points: *const f64,
    n_points: usize,
    width: usize,
    height: usize,
    sigma: f64,
    out: *mut f64,
    out_len: usize,
) -> LcdStatus {
    render(points, n_points, width, height, DensityConfig::fixed(sigma), out, out_len)
}

/// As [`lcd_render_density_fixed`] with kernel width `beta` times the mean
/// distance to the `k` nearest neighbours.
///
/// # Safety
/// See [`lcd_render_density_fixed`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lcd_render_density_adaptive(
    points: *const f64,
    n_points: usize,
    width: usize,
    height: usize,
    k: usize,
    beta: f64,
    out: *mut f64,
    out_len: usize,
) -> LcdStatus {
    render(points, n_points, width, height, DensityConfig::adaptive(k, beta), out, out_len)
}

unsafe fn render(
    points: *const f64,
    n_points: usize,
    width: usize,
    height: usize,
    config: DensityConfig,
    out: *mut f64,
    out_len: usize,
) -> LcdStatus {
    guard(|| {
        let coords: &[f64] = if n_points == 0 { &[] } else { slice(points, product(&[2, n_points])?, "points")? };
        let dots = DotMap::new(width, height, coords.chunks_exact(2).map(|p| (p[0], p[1])).collect());
        let density = lib(render_density(&dots, &config))?;
        out_slice(out, out_len, density.len(), "out")?.copy_from_slice(density.data());
        Ok(())
    })
}

/// 2x2 sum pooling of a `height x width` map into
/// `ceil(height / 2) * ceil(width / 2)` values; total mass is preserved.
///
/// # Safety
/// `map` must hold `height * width` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lcd_downscale(
    map: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> LcdStatus {
    guard(|| {
        let small = lib(downscale_target(&map_arg(map, height, width, "map")?))?;
        out_slice(out, out_len, small.len(), "out")?.copy_from_slice(small.data());
        Ok(())
    })
}

/// Mean absolute error between `n` predicted and true counts.
///
/// # Safety
/// `pred` and `gt` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_mae(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = (slice(pred, n, "pred")?, slice(gt, n, "gt")?);
        let pairs: Vec<_> = p.iter().copied().zip(g.iter().copied()).collect();
        *out = lib(mae(&pairs))?;
        Ok(())
    })
}

/// GAME of one map pair over a `rows x cols` patch grid.
///
/// # Safety
/// Both maps must hold `height * width` values; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lcd_game(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = (map_arg(pred, height, width, "pred")?, map_arg(gt, height, width, "gt")?);
        *out = lib(game(&p, &g, GridSetting::Explicit { rows, cols }))?;
        Ok(())
    })
}

/// Whole-map SSIM with automatically derived constants.
///
/// # Safety
/// Both maps must hold `height * width` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_ssim(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = (map_arg(pred, height, width, "pred")?, map_arg(gt, height, width, "gt")?);
        *out = lib(ssim(&p, &g, &SsimConfig::default()))?;
        Ok(())
    })
}

/// PSNR in dB. A `max_value` of NaN selects the ground-truth maximum;
/// identical maps give positive infinity.
///
/// # Safety
/// Both maps must hold `height * width` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lcd_psnr(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    max_value: f64,
    out: *mut f64,
) -> LcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = (map_arg(pred, height, width, "pred")?, map_arg(gt, height, width, "gt")?);
        let max = if max_value.is_nan() { None } else { Some(max_value) };
        *out = lib(psnr(&p, &g, max))?;
        Ok(())
    })
}
