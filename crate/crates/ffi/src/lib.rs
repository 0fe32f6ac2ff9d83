//! C ABI for loading fitted qpma models, fitting new ones and predicting
//! conditional quantiles.
//!
//! Every fallible function returns a [`QpmaStatus`]; on failure the message
//! is available from [`qpma_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qpma::averaging::{fit_jackknife, AveragedModel, JackknifeOptions};
use qpma::evaluation::QuantilePredictor;
use qpma::model_file::{Diagnostics, ModelFile};
use qpma::{Dataset, QpmaError};

/// Status codes returned by the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    ModelFileError = 5,
    IoError = 6,
    Panic = 7,
}

impl From<&QpmaError> for QpmaStatus {
    fn from(e: &QpmaError) -> Self {
        match e {
            QpmaError::Config(_)
            | QpmaError::InvalidArgument(_)
            | QpmaError::TauOutOfRange(_)
            | QpmaError::DimensionMismatch { .. } => QpmaStatus::InvalidArgument,
            QpmaError::CollinearDesign | QpmaError::Numerical(_) => QpmaStatus::NumericalError,
            QpmaError::LooFit { source, .. } => QpmaStatus::from(source.as_ref()),
            QpmaError::ModelFile(_) | QpmaError::Json(_) => QpmaStatus::ModelFileError,
            QpmaError::Io(_) => QpmaStatus::IoError,
            _ => QpmaStatus::DataError,
        }
    }
}

/// Opaque handle to a fitted averaged model.
pub struct QpmaModel {
    file: ModelFile,
    model: AveragedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: QpmaStatus, msg: impl Into<String>) -> QpmaStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> QpmaStatus
where
    F: FnOnce() -> Result<(), (QpmaStatus, String)>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpmaStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(QpmaStatus::Panic, "internal panic"),
    }
}

fn lift(e: QpmaError) -> (QpmaStatus, String) {
    (QpmaStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (QpmaStatus, String) {
    (QpmaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (QpmaStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (QpmaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (QpmaStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn area(a: usize, b: usize) -> Result<usize, (QpmaStatus, String)> {
    a.checked_mul(b).ok_or_else(|| (QpmaStatus::InvalidArgument, "array size overflows".to_string()))
}

fn wrap(file: ModelFile) -> Result<*mut QpmaModel, (QpmaStatus, String)> {
    let model = file.model().map_err(lift)?;
    Ok(Box::into_raw(Box::new(QpmaModel { file, model })))
}

/// Loads a model file written by `qpma fit`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_load(path: *const c_char, out: *mut *mut QpmaModel) -> QpmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let file = ModelFile::load(Path::new(path)).map_err(lift)?;
        *out = wrap(file)?;
        Ok(())
    })
}

/// Parses a model from the JSON text of a model file.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_from_json(json: *const c_char, out: *mut *mut QpmaModel) -> QpmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let file = ModelFile::from_json(c_str(json, "json")?).map_err(lift)?;
        *out = wrap(file)?;
        Ok(())
    })
}

/// Fits every candidate and the leave-one-out weights with default settings.
///
/// `x` is row-major `n × (p + q)` with the `p` continuous covariates first;
/// `y` has length `n`.
///
/// # Safety
/// `y` must point to `n` doubles, `x` to `n·(p+q)` doubles, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qpma_fit(
    y: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    q: usize,
    out: *mut *mut QpmaModel,
) -> QpmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let y = slice(y, n, "y")?.to_vec();
        let x = slice(x, area(n, p.saturating_add(q))?, "x")?.to_vec();
        let data = Dataset::new(y, x, p, q).map_err(lift)?;
        let opts = JackknifeOptions::default();
        let fit = fit_jackknife(&data, &opts).map_err(lift)?;
        let diagnostics = Diagnostics {
            candidate_converged: fit.model.candidates.iter().map(|c| c.converged).collect(),
            weights_converged: fit.weights_converged,
            cv: Some(fit.cv),
            cv_grid_len: Some(fit.cv_grid_len),
            loo_nonconverged: fit.loo_nonconverged,
            ..Diagnostics::default()
        };
        let file = ModelFile::new("y", &data, &fit.model, diagnostics).map_err(lift)?;
        *out = wrap(file)?;
        Ok(())
    })
}

/// Releases a model. Passing NULL is a no-op.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_free(model: *mut QpmaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of candidate sub-models (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_num_candidates(model: *const QpmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.candidates.len())
}

/// Number of covariates a row must have (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_num_covariates(model: *const QpmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.file.columns.len())
}

/// Copies the model weights into `out`, which must hold `len` doubles;
/// `len` must equal the number of candidates.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_weights(model: *const QpmaModel, out: *mut f64, len: usize) -> QpmaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let w = m.model.weights.as_slice();
        if len != w.len() {
            return Err((QpmaStatus::InvalidArgument, format!("expected {} weights, buffer holds {len}", w.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(w);
        Ok(())
    })
}

/// Predicts quantiles for `n_rows` rows (row-major, `n_cols` covariates in
/// model column order) at `n_taus` levels. `out` receives `n_rows × n_taus`
/// values, row-major.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_predict(
    model: *const QpmaModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    taus: *const f64,
    n_taus: usize,
    out: *mut f64,
) -> QpmaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let width = m.file.columns.len();
        if n_cols != width {
            return Err((QpmaStatus::InvalidArgument, format!("model expects {width} covariates, got {n_cols}")));
        }
        let x = slice(x, area(n_rows, n_cols)?, "x")?;
        let taus = slice(taus, n_taus, "taus")?;
        let total = area(n_rows, n_taus)?;
        if total == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, total);
        for (row, dst) in x.chunks_exact(n_cols).zip(out.chunks_exact_mut(n_taus)) {
            dst.copy_from_slice(&m.model.predict_taus(row, taus).map_err(lift)?);
        }
        Ok(())
    })
}

/// Serializes the model to JSON. Free the result with [`qpma_string_free`].
/// Returns NULL on failure.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpma_model_to_json(model: *const QpmaModel) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let json = m.file.to_json().map_err(lift)?;
        text = Some(CString::new(json).map_err(|e| (QpmaStatus::ModelFileError, e.to_string()))?);
        Ok(())
    });
    match (status, text) {
        (QpmaStatus::Ok, Some(s)) => s.into_raw(),
        _ => ptr::null_mut(),
    }
}

/// Copy of the last error message on this thread, or NULL if the last call
/// succeeded. Free with [`qpma_string_free`].
#[no_mangle]
pub extern "C" fn qpma_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Frees a string returned by this library. Passing NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn qpma_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qpma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
