//! C ABI over the `kmn` crate.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`KmnStatus`]; on failure [`kmn_last_error_message`] describes the error
//! raised on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use kmn::checkpoint::load_model;
use kmn::error::ErrorClass;
use kmn::filtering::FilterModel;
use kmn::{CenterSet, Error, KernelSpec, MixtureDensity, MixtureHead};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numerical = 4,
    Panic = 5,
}

/// A trained filter model loaded from a checkpoint.
pub struct KmnModel {
    inner: FilterModel,
}

/// A fixed mixture density.
pub struct KmnMixture {
    inner: MixtureDensity,
    /// Maps head coordinates back to the latent (quantized circle models).
    model: Option<Arc<FilterModel>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn fail(status: KmnStatus, msg: &str) -> KmnStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> KmnStatus {
    let status = match e.class() {
        ErrorClass::Validation => KmnStatus::InvalidArgument,
        ErrorClass::Io => KmnStatus::Io,
        ErrorClass::Numerical => KmnStatus::Numerical,
    };
    fail(status, &e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), KmnStatus>) -> KmnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KmnStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(KmnStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], KmnStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(KmnStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn not_null<T>(ptr: *const T, what: &str) -> Result<(), KmnStatus> {
    if ptr.is_null() {
        Err(fail(KmnStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn kmn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kmn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by `kmn train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_model_load(path: *const c_char, out: *mut *mut KmnModel) -> KmnStatus {
    guard(|| {
        not_null(path, "path")?;
        not_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(KmnStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let inner = load_model(Path::new(path)).map_err(from_error)?;
        *out = Box::into_raw(Box::new(KmnModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`kmn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kmn_model_free(model: *mut KmnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of observations the model conditions on.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_model_window(model: *const KmnModel, out: *mut usize) -> KmnStatus {
    guard(|| {
        not_null(model, "model")?;
        not_null(out, "out")?;
        *out = (*model).inner.window;
        Ok(())
    })
}

/// Conditional density of the latent given `len` observations, oldest first.
///
/// # Safety
/// `model` must be a live handle, `observations` must point to `len` reals
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_model_condition(
    model: *const KmnModel,
    observations: *const f64,
    len: usize,
    out: *mut *mut KmnMixture,
) -> KmnStatus {
    guard(|| {
        not_null(model, "model")?;
        not_null(out, "out")?;
        let obs = slice(observations, len, "observations")?;
        let model = &(*model).inner;
        let inner = model.conditional_density(obs).map_err(from_error)?;
        *out = Box::into_raw(Box::new(KmnMixture {
            inner,
            model: Some(Arc::new(model.clone())),
        }));
        Ok(())
    })
}

unsafe fn new_mixture(
    spec: Result<KernelSpec, Error>,
    centers: *const f64,
    n_centers: usize,
    weights: *const f64,
    n_weights: usize,
    out: *mut *mut KmnMixture,
) -> KmnStatus {
    guard(|| {
        not_null(out, "out")?;
        let centers = slice(centers, n_centers, "centers")?;
        let weights = slice(weights, n_weights, "weights")?;
        let spec = spec.map_err(from_error)?;
        let centers =
            CenterSet::new(centers.to_vec(), 0.0, spec.manifold()).map_err(from_error)?;
        let head = MixtureHead::new(centers, spec).map_err(from_error)?;
        let inner = MixtureDensity::new(Arc::new(head), weights).map_err(from_error)?;
        *out = Box::into_raw(Box::new(KmnMixture { inner, model: None }));
        Ok(())
    })
}

/// Gaussian kernel mixture. Weights are laid out center-major:
/// `weights[p * n_sigmas + j]` belongs to center `p` and bandwidth `j`.
///
/// # Safety
/// Each pointer must reference the stated number of reals; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_new_gaussian(
    centers: *const f64,
    n_centers: usize,
    sigmas: *const f64,
    n_sigmas: usize,
    weights: *const f64,
    n_weights: usize,
    out: *mut *mut KmnMixture,
) -> KmnStatus {
    let spec = match slice(sigmas, n_sigmas, "sigmas") {
        Ok(s) => KernelSpec::gaussian(s.to_vec()),
        Err(status) => return status,
    };
    new_mixture(spec, centers, n_centers, weights, n_weights, out)
}

/// Von Mises kernel mixture on `(−π, π]`, laid out as in
/// [`kmn_mixture_new_gaussian`] with concentrations in place of bandwidths.
///
/// # Safety
/// Each pointer must reference the stated number of reals; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_new_von_mises(
    centers: *const f64,
    n_centers: usize,
    kappas: *const f64,
    n_kappas: usize,
    weights: *const f64,
    n_weights: usize,
    out: *mut *mut KmnMixture,
) -> KmnStatus {
    let spec = match slice(kappas, n_kappas, "kappas") {
        Ok(s) => KernelSpec::von_mises(s.to_vec()),
        Err(status) => return status,
    };
    new_mixture(spec, centers, n_centers, weights, n_weights, out)
}

/// # Safety
/// `mixture` must be a live handle and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_free(mixture: *mut KmnMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

fn head_coordinate(m: &KmnMixture, x: f64) -> f64 {
    m.model.as_ref().map_or(x, |model| model.head_coordinate(x))
}

/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_density(
    mixture: *const KmnMixture,
    x: f64,
    out: *mut f64,
) -> KmnStatus {
    guard(|| {
        not_null(mixture, "mixture")?;
        not_null(out, "out")?;
        let m = &*mixture;
        *out = m.inner.density(head_coordinate(m, x));
        Ok(())
    })
}

/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_log_density(
    mixture: *const KmnMixture,
    x: f64,
    out: *mut f64,
) -> KmnStatus {
    guard(|| {
        not_null(mixture, "mixture")?;
        not_null(out, "out")?;
        let m = &*mixture;
        *out = m.inner.log_density(head_coordinate(m, x));
        Ok(())
    })
}

/// Draw `n` samples into `out` from a stream keyed by `seed`.
///
/// # Safety
/// `mixture` must be a live handle; `out` must have room for `n` reals.
#[no_mangle]
pub unsafe extern "C" fn kmn_mixture_sample(
    mixture: *const KmnMixture,
    seed: u64,
    n: usize,
    out: *mut f64,
) -> KmnStatus {
    guard(|| {
        not_null(mixture, "mixture")?;
        if n == 0 {
            return Ok(());
        }
        not_null(out, "out")?;
        let m = &*mixture;
        let out = std::slice::from_raw_parts_mut(out, n);
        let mut rng = kmn::seed::stream(seed, "ffi-sample", 0);
        for o in out {
            let h = m.inner.sample(&mut rng);
            *o = m.model.as_ref().map_or(h, |model| model.latent_coordinate(h));
        }
        Ok(())
    })
}
