//! C ABI over `bmcumulant`.
//!
//! Models live behind an opaque `BmModel` handle created by one of the
//! `bm_model_*` constructors and released with `bm_model_free`. Every
//! fallible call returns a `BmStatus`; on failure the message is available
//! from `bm_last_error_message` on the same thread until the next call.
//! Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bmcumulant::decimation;
use bmcumulant::estimators::{estimate_moments, MomentConfig};
use bmcumulant::exact;
use bmcumulant::format;
use bmcumulant::meanfield::SolverConfig;
use bmcumulant::model::random_model;
use bmcumulant::{approximate, ApproxFamily, BoltzmannModel, Error, MomentMethod, Structure, Topology};

/// Opaque model handle.
pub struct BmModel {
    inner: BoltzmannModel,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IndexOutOfRange = 3,
    TooLarge = 4,
    NotDecimatable = 5,
    Parse = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BmTopology {
    Full = 0,
    Chain = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BmFamily {
    Factorised = 0,
    Decimatable = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BmMomentMethod {
    Variational = 0,
    Ratio1 = 1,
    Ratio2 = 2,
}

/// Result of fitting a tractable model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BmApproximation {
    /// First-order estimate of `log Z`; a lower bound.
    pub first: f64,
    /// Second-order estimate of `log Z`.
    pub second: f64,
    /// 1 when the fixed-point iteration converged.
    pub converged: i32,
    pub iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(BmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::IndexOutOfRange { .. } => BmStatus::IndexOutOfRange,
            Error::TooLarge { .. } => BmStatus::TooLarge,
            Error::NotDecimatable { .. } => BmStatus::NotDecimatable,
            Error::Parse { .. } => BmStatus::Parse,
            Error::Io(_) => BmStatus::Io,
            _ => BmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal panic: {message}"));
            BmStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const BmModel) -> Result<&'a BoltzmannModel, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(model: *mut BmModel) -> Result<&'a mut BoltzmannModel, Failure> {
    model.as_mut().map(|m| &mut m.inner).ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(BmStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Failure(BmStatus::BufferTooSmall, format!("{what} holds {len} values, {needed} required")));
    }
    Ok(std::slice::from_raw_parts_mut(out, needed))
}

unsafe fn edge_list(n: usize, edges: *const usize, edge_count: usize) -> Result<Structure, Failure> {
    if edge_count == 0 {
        return Ok(Structure::empty(n));
    }
    if edges.is_null() {
        return Err(null("edges"));
    }
    let flat = std::slice::from_raw_parts(edges, 2 * edge_count);
    Ok(Structure::new(n, flat.chunks_exact(2).map(|p| (p[0], p[1])))?)
}

fn into_handle(model: BoltzmannModel) -> *mut BmModel {
    Box::into_raw(Box::new(BmModel { inner: model }))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a model with `n` nodes and all parameters zero.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_new(n: usize, out: *mut *mut BmModel) -> BmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        write_out(out, into_handle(BoltzmannModel::zeros(n)), "out")
    })
}

/// Draws biases and couplings on the chosen topology from `N(0, sigma^2)`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_random(
    n: usize,
    topology: BmTopology,
    sigma: f64,
    seed: u64,
    out: *mut *mut BmModel,
) -> BmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let topology = match topology {
            BmTopology::Full => Topology::Full,
            BmTopology::Chain => Topology::Chain,
        };
        let model = random_model(n, &topology, sigma, seed)?;
        write_out(out, into_handle(model), "out")
    })
}

/// Reads a `.bmtx` model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_read(path: *const c_char, out: *mut *mut BmModel) -> BmStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let file = format::read_model(&path).map_err(|e| {
            let Failure(status, message) = Failure::from(e);
            Failure(status, format!("{path}: {message}"))
        })?;
        write_out(out, into_handle(file.model), "out")
    })
}

/// Writes the model in `.bmtx` format.
///
/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bm_model_write(model: *const BmModel, path: *const c_char) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = path_arg(path)?;
        std::fs::write(&path, format::write_model(model)).map_err(|e| Failure(BmStatus::Io, format!("{path}: {e}")))
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bm_model_free(model: *mut BmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of nodes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_n(model: *const BmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_set_bias(model: *mut BmModel, i: usize, value: f64) -> BmStatus {
    guard(|| Ok(model_mut(model)?.set_bias(i, value)?))
}

/// Sets the symmetric coupling between `i` and `j`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_set_coupling(model: *mut BmModel, i: usize, j: usize, value: f64) -> BmStatus {
    guard(|| Ok(model_mut(model)?.set_coupling(i, j, value)?))
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_model_set_constant(model: *mut BmModel, value: f64) -> BmStatus {
    guard(|| {
        model_mut(model)?.set_constant(value);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_bias(model: *const BmModel, i: usize, out: *mut f64) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        if i >= model.n() {
            return Err(Error::IndexOutOfRange { index: i, n: model.n() }.into());
        }
        write_out(out, model.bias(i), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_coupling(model: *const BmModel, i: usize, j: usize, out: *mut f64) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let n = model.n();
        if let Some(index) = [i, j].into_iter().find(|&k| k >= n) {
            return Err(Error::IndexOutOfRange { index, n }.into());
        }
        write_out(out, model.coupling(i, j), "out")
    })
}

/// Exact `log Z` by enumeration, refused above 24 nodes.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_exact_log_z(model: *const BmModel, out: *mut f64) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        write_out(out, exact::log_z(model)?, "out")
    })
}

/// Exact means into `out[0..n]`.
///
/// # Safety
/// `model` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bm_exact_means(model: *const BmModel, out: *mut f64, len: usize) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let dst = out_slice(out, len, model.n(), "out")?;
        let summary = exact::enumerate(model)?;
        dst.copy_from_slice(&summary.means);
        Ok(())
    })
}

/// `log Z` by summing out nodes of degree at most two; fails with
/// `NotDecimatable` when the coupling graph does not reduce.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_decimate_log_z(model: *const BmModel, out: *mut f64) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        write_out(out, decimation::decimatable_log_z(model)?, "out")
    })
}

/// Fits a tractable model and reports the first- and second-order
/// estimates. `edges` holds `edge_count` index pairs laid out flat and is
/// read only for the decimatable family.
///
/// # Safety
/// `model` must be a live handle; `edges` must hold `2 * edge_count` values
/// when `edge_count > 0`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_approximate(
    model: *const BmModel,
    family: BmFamily,
    edges: *const usize,
    edge_count: usize,
    out: *mut BmApproximation,
) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let family = match family {
            BmFamily::Factorised => ApproxFamily::Factorised,
            BmFamily::Decimatable => ApproxFamily::Decimatable(edge_list(model.n(), edges, edge_count)?),
        };
        let fit = approximate(model, &family, &SolverConfig::default())?;
        let result = BmApproximation {
            first: fit.first,
            second: fit.second,
            converged: fit.converged as i32,
            iterations: fit.iterations,
        };
        write_out(out, result, "out")
    })
}

/// Factorised moment estimates: means into `means[0..n]`, row-major
/// `<s_i s_j>` into `correlations[0..n*n]`. Pass NULL for either output to
/// skip it.
///
/// # Safety
/// `model` must be a live handle; non-NULL outputs must hold the given
/// number of doubles.
#[no_mangle]
pub unsafe extern "C" fn bm_moments(
    model: *const BmModel,
    method: BmMomentMethod,
    means: *mut f64,
    means_len: usize,
    correlations: *mut f64,
    correlations_len: usize,
) -> BmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let n = model.n();
        let means = if means.is_null() { None } else { Some(out_slice(means, means_len, n, "means")?) };
        let correlations = if correlations.is_null() {
            None
        } else {
            Some(out_slice(correlations, correlations_len, n * n, "correlations")?)
        };
        let method = match method {
            BmMomentMethod::Variational => MomentMethod::Variational,
            BmMomentMethod::Ratio1 => MomentMethod::Ratio1,
            BmMomentMethod::Ratio2 => MomentMethod::Ratio2,
        };
        let estimate = estimate_moments(model, method, &MomentConfig::default())?;
        if let Some(dst) = means {
            dst.copy_from_slice(&estimate.means);
        }
        if let Some(dst) = correlations {
            dst.copy_from_slice(&estimate.correlations);
        }
        Ok(())
    })
}
