//! C ABI for the `iwo` crate.
//!
//! Objects cross the boundary as opaque handles that the caller owns and
//! releases with the matching `*_free` function. Every fallible call returns
//! an [`IwoStatus`]; on failure a message is available from
//! [`iwo_last_error`] on the same thread until the next failing call.
//!
//! Matrices are row-major `double` buffers.

use iwo::gca::GcaHyperparams;
use iwo::metrics;
use iwo::pipeline::{self, MetricsReport};
use iwo::{FactorBasis, Matrix, RepresentationDataset, SyntheticConfig};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IwoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Training = 4,
    Metrics = 5,
    /// The factor has no basis because its run failed.
    FactorFailed = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

/// A code/factor dataset.
pub struct IwoDataset(RepresentationDataset);

/// An importance-weighted orthonormal basis of one factor.
pub struct IwoBasis(FactorBasis);

/// Metrics of one dataset under one seed.
pub struct IwoReport(MetricsReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(IwoStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(IwoStatus::InvalidArgument, msg.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IwoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IwoStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            IwoStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(IwoStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(IwoStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(IwoStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(IwoStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::arg(format!("{what} is not valid UTF-8")))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b).ok_or_else(|| Fail::arg("size overflow"))
}

fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail(
            IwoStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Fail(IwoStatus::NullPointer, "output buffer is null".into()));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn iwo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iwo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn iwo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a dataset from `n x latent_dim` codes and `n x factors` factor values.
///
/// # Safety
/// Buffers must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_dataset_new(
    codes: *const f64,
    factor_values: *const f64,
    n: usize,
    latent_dim: usize,
    factors: usize,
    out: *mut *mut IwoDataset,
) -> IwoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = slice(codes, checked_len(n, latent_dim)?, "codes")?;
        let z = slice(factor_values, checked_len(n, factors)?, "factors")?;
        let ds = RepresentationDataset::new(
            Matrix::from_vec(n, latent_dim, c.to_vec()),
            Matrix::from_vec(n, factors, z.to_vec()),
        )
        .map_err(|e| Fail::arg(e.to_string()))?;
        *out = boxed(IwoDataset(ds));
        Ok(())
    })
}

/// Loads codes and factors from CSV or binary files.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_dataset_load(
    codes_path: *const c_char,
    factors_path: *const c_char,
    out: *mut *mut IwoDataset,
) -> IwoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = string(codes_path, "codes_path")?;
        let z = string(factors_path, "factors_path")?;
        let ds = iwo::dataset_io::load_dataset(Path::new(c), Path::new(z))
            .map_err(|e| Fail(IwoStatus::Io, e.to_string()))?;
        *out = boxed(IwoDataset(ds));
        Ok(())
    })
}

/// Generates a synthetic dataset from a JSON-encoded synthetic configuration,
/// e.g. `{"latent_dim":10,"factors":5,"rank":2,"mapping":{"kind":"poly"}}`.
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_dataset_synthetic(config_json: *const c_char, out: *mut *mut IwoDataset) -> IwoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = string(config_json, "config_json")?;
        let config: SyntheticConfig = serde_json::from_str(text).map_err(|e| Fail::arg(e.to_string()))?;
        let ds = iwo::synth::generate(&config).map_err(|e| Fail::arg(e.to_string()))?;
        *out = boxed(IwoDataset(ds));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_dataset_free(ds: *mut IwoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_dataset_shape(
    ds: *const IwoDataset,
    n: *mut usize,
    latent_dim: *mut usize,
    factors: *mut usize,
) -> IwoStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        *out_ptr(n, "n")? = d.len();
        *out_ptr(latent_dim, "latent_dim")? = d.latent_dim();
        *out_ptr(factors, "factors")? = d.num_factors();
        Ok(())
    })
}

/// Trains every factor and computes all metrics.
///
/// `hyper_json` may be null for defaults, or a JSON object of training
/// settings (missing keys keep their defaults). `seed` overrides its seed.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_evaluate(
    ds: *const IwoDataset,
    hyper_json: *const c_char,
    seed: u64,
    out: *mut *mut IwoReport,
) -> IwoStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        let out = out_ptr(out, "out")?;
        let mut hyper: GcaHyperparams = if hyper_json.is_null() {
            GcaHyperparams::default()
        } else {
            serde_json::from_str(string(hyper_json, "hyper_json")?).map_err(|e| Fail::arg(e.to_string()))?
        };
        hyper.seed = seed;
        let report = pipeline::evaluate(d, &hyper).map_err(|e| Fail(IwoStatus::Training, e.to_string()))?;
        *out = boxed(IwoReport(report));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_free(r: *mut IwoReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_num_factors(r: *const IwoReport, out: *mut usize) -> IwoStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(r, "report")?.0.factors.len();
        Ok(())
    })
}

/// Mean IWO over factor pairs; NaN when undefined.
///
/// # Safety
/// `r` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_mean_iwo(r: *const IwoReport, out: *mut f64) -> IwoStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(r, "report")?.0.summary.mean_iwo.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Mean IWR over factors; NaN when undefined.
///
/// # Safety
/// `r` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_mean_iwr(r: *const IwoReport, out: *mut f64) -> IwoStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(r, "report")?.0.summary.mean_iwr.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Copies the `K x K` pairwise IWO matrix (NaN on the diagonal and for
/// failed factors) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_pairwise_iwo(r: *const IwoReport, buf: *mut f64, len: usize) -> IwoStatus {
    guard(|| copy_out(deref(r, "report")?.0.summary.pairwise_iwo.as_slice(), buf, len))
}

/// Copies the per-factor IWR values (NaN for failed factors) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_iwr(r: *const IwoReport, buf: *mut f64, len: usize) -> IwoStatus {
    guard(|| copy_out(&deref(r, "report")?.0.summary.iwr, buf, len))
}

/// Copies the basis of one factor into a new handle.
///
/// # Safety
/// `r` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_basis(r: *const IwoReport, factor: usize, out: *mut *mut IwoBasis) -> IwoStatus {
    guard(|| {
        let rep = &deref(r, "report")?.0;
        let out = out_ptr(out, "out")?;
        let f = rep
            .factors
            .get(factor)
            .ok_or_else(|| Fail::arg(format!("factor {factor} out of range")))?;
        let b = f
            .basis
            .clone()
            .ok_or_else(|| Fail(IwoStatus::FactorFailed, format!("factor {factor} has no basis")))?;
        *out = boxed(IwoBasis(b));
        Ok(())
    })
}

/// Serializes the report as JSON. Free the result with [`iwo_string_free`].
///
/// # Safety
/// `r` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_report_to_json(r: *const IwoReport, out: *mut *mut c_char) -> IwoStatus {
    guard(|| {
        let rep = &deref(r, "report")?.0;
        let out = out_ptr(out, "out")?;
        let json = serde_json::to_string(rep).map_err(|e| Fail(IwoStatus::Metrics, e.to_string()))?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Builds a basis from `rank x latent_dim` orthonormal rows and `rank`
/// importances summing to one.
///
/// # Safety
/// Buffers must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_new(
    rows: *const f64,
    importance: *const f64,
    rank: usize,
    latent_dim: usize,
    out: *mut *mut IwoBasis,
) -> IwoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = slice(rows, checked_len(rank, latent_dim)?, "rows")?;
        let a = slice(importance, rank, "importance")?;
        let basis = FactorBasis::new(0, Matrix::from_vec(rank, latent_dim, b.to_vec()), a.to_vec(), false)
            .map_err(|e| Fail::arg(e.to_string()))?;
        *out = boxed(IwoBasis(basis));
        Ok(())
    })
}

/// # Safety
/// `b` must be null or a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_free(b: *mut IwoBasis) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_shape(b: *const IwoBasis, rank: *mut usize, latent_dim: *mut usize) -> IwoStatus {
    guard(|| {
        let b = &deref(b, "basis")?.0;
        *out_ptr(rank, "rank")? = b.rank();
        *out_ptr(latent_dim, "latent_dim")? = b.latent_dim();
        Ok(())
    })
}

/// Copies the basis rows (most important first) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_rows(b: *const IwoBasis, buf: *mut f64, len: usize) -> IwoStatus {
    guard(|| copy_out(deref(b, "basis")?.0.basis.as_slice(), buf, len))
}

/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_importance(b: *const IwoBasis, buf: *mut f64, len: usize) -> IwoStatus {
    guard(|| copy_out(&deref(b, "basis")?.0.importance, buf, len))
}

/// IWO of two bases in the same latent space.
///
/// # Safety
/// `a` and `b` must be live basis handles.
#[no_mangle]
pub unsafe extern "C" fn iwo_pair_iwo(a: *const IwoBasis, b: *const IwoBasis, out: *mut f64) -> IwoStatus {
    guard(|| {
        let v = metrics::iwo_pair(&deref(a, "a")?.0, &deref(b, "b")?.0)
            .map_err(|e| Fail(IwoStatus::Metrics, e.to_string()))?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// Unweighted orthogonality of the two spans.
///
/// # Safety
/// `a` and `b` must be live basis handles.
#[no_mangle]
pub unsafe extern "C" fn iwo_pair_orthogonality(a: *const IwoBasis, b: *const IwoBasis, out: *mut f64) -> IwoStatus {
    guard(|| {
        let v = metrics::orthogonality(&deref(a, "a")?.0.basis, &deref(b, "b")?.0.basis)
            .map_err(|e| Fail(IwoStatus::Metrics, e.to_string()))?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// # Safety
/// `b` must be a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn iwo_basis_iwr(b: *const IwoBasis, out: *mut f64) -> IwoStatus {
    guard(|| {
        let v = metrics::iwr(&deref(b, "basis")?.0).map_err(|e| Fail(IwoStatus::Metrics, e.to_string()))?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(iwo_last_error()).to_string_lossy().into_owned() }
    }

    fn basis(rows: &[f64], alpha: &[f64], l: usize) -> *mut IwoBasis {
        let mut b = ptr::null_mut();
        let s = unsafe { iwo_basis_new(rows.as_ptr(), alpha.as_ptr(), alpha.len(), l, &mut b) };
        assert_eq!(s, IwoStatus::Ok, "{}", last_error());
        b
    }

    #[test]
    fn pure_metrics() {
        let a = basis(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[0.5, 0.5], 3);
        let b = basis(&[0.0, 0.0, 1.0], &[1.0], 3);
        let mut v = f64::NAN;
        unsafe {
            assert_eq!(iwo_pair_iwo(a, b, &mut v), IwoStatus::Ok);
            assert!((v - 1.0).abs() < 1e-12);
            assert_eq!(iwo_pair_iwo(a, a, &mut v), IwoStatus::Ok);
            assert!(v.abs() < 1e-12);
            assert_eq!(iwo_pair_orthogonality(a, b, &mut v), IwoStatus::Ok);
            assert!(v.abs() < 1e-12);
            assert_eq!(iwo_basis_iwr(b, &mut v), IwoStatus::Ok);
            assert_eq!(v, 1.0);
            let (mut r, mut l) = (0, 0);
            assert_eq!(iwo_basis_shape(a, &mut r, &mut l), IwoStatus::Ok);
            assert_eq!((r, l), (2, 3));
            let mut small = [0.0; 2];
            assert_eq!(iwo_basis_rows(a, small.as_mut_ptr(), 2), IwoStatus::BufferTooSmall);
            let mut rows = [0.0; 6];
            assert_eq!(iwo_basis_rows(a, rows.as_mut_ptr(), 6), IwoStatus::Ok);
            assert_eq!(rows, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
            iwo_basis_free(a);
            iwo_basis_free(b);
        }
    }

    #[test]
    fn errors_are_reported() {
        let mut b = ptr::null_mut();
        let rows = [1.0, 1.0];
        let s = unsafe { iwo_basis_new(rows.as_ptr(), [1.0].as_ptr(), 1, 2, &mut b) };
        assert_eq!(s, IwoStatus::InvalidArgument);
        assert!(b.is_null());
        assert!(!last_error().is_empty());
        let s = unsafe { iwo_basis_new(ptr::null(), [1.0].as_ptr(), 1, 2, &mut b) };
        assert_eq!(s, IwoStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(unsafe { iwo_pair_iwo(ptr::null(), ptr::null(), &mut v) }, IwoStatus::NullPointer);
        let bad = CString::new("{\"latent_dim\": 3}").unwrap();
        let mut ds = ptr::null_mut();
        assert_eq!(unsafe { iwo_dataset_synthetic(bad.as_ptr(), &mut ds) }, IwoStatus::InvalidArgument);
        unsafe {
            iwo_dataset_free(ptr::null_mut());
            iwo_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn version_matches() {
        let v = unsafe { CStr::from_ptr(iwo_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn end_to_end_evaluation() {
        let config =
            CString::new(r#"{"latent_dim":3,"factors":3,"rank":1,"mapping":{"kind":"identity"},"n_samples":600}"#)
                .unwrap();
        let hyper = CString::new(r#"{"epochs":1,"head_hidden_dims":[8]}"#).unwrap();
        unsafe {
            let mut ds = ptr::null_mut();
            assert_eq!(iwo_dataset_synthetic(config.as_ptr(), &mut ds), IwoStatus::Ok, "{}", last_error());
            let (mut n, mut l, mut k) = (0, 0, 0);
            assert_eq!(iwo_dataset_shape(ds, &mut n, &mut l, &mut k), IwoStatus::Ok);
            assert_eq!((n, l, k), (600, 3, 3));
            let mut rep = ptr::null_mut();
            assert_eq!(iwo_evaluate(ds, hyper.as_ptr(), 7, &mut rep), IwoStatus::Ok, "{}", last_error());
            let mut kf = 0;
            assert_eq!(iwo_report_num_factors(rep, &mut kf), IwoStatus::Ok);
            assert_eq!(kf, 3);
            let mut pairwise = [0.0; 9];
            assert_eq!(iwo_report_pairwise_iwo(rep, pairwise.as_mut_ptr(), 9), IwoStatus::Ok);
            assert!(pairwise[0].is_nan());
            let mut iwr = [0.0; 3];
            assert_eq!(iwo_report_iwr(rep, iwr.as_mut_ptr(), 3), IwoStatus::Ok);
            let mut b = ptr::null_mut();
            assert_eq!(iwo_report_basis(rep, 0, &mut b), IwoStatus::Ok);
            assert_eq!(iwo_report_basis(rep, 9, &mut b), IwoStatus::InvalidArgument);
            iwo_basis_free(b);
            let mut json = ptr::null_mut();
            assert_eq!(iwo_report_to_json(rep, &mut json), IwoStatus::Ok);
            let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
            assert!(text.contains("\"seed\":7"));
            iwo_string_free(json);
            iwo_report_free(rep);
            iwo_dataset_free(ds);
        }
    }
}
