//! C ABI for the two-stage DOA estimator.
//!
//! Handles are opaque and owned by the caller once returned; every handle
//! must be released with its `_free` function. Functions return a
//! [`PcdoaStatus`]; on failure [`pcdoa_last_error_message`] describes the
//! error for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use pcdoa::array_model::UlaConfig;
use pcdoa::estimator::{
    EstimationResult, EstimatorConfig, NoiseVariance, SourceCount, SparseSpectrum, TwoStageEstimator,
};
use pcdoa::scene_sim::SnapshotMatrix;
use pcdoa::{Error, ErrorCategory};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdoaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Stage selector values accepted by the `stage` parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdoaStage {
    One = 1,
    Two = 2,
}

/// Opaque estimator with prebuilt dictionaries.
pub struct PcdoaEstimator {
    inner: TwoStageEstimator,
}

/// Opaque estimation result.
pub struct PcdoaResult {
    inner: EstimationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PcdoaStatus, msg: &str) -> PcdoaStatus {
    set_last_error(msg);
    status
}

fn from_error(e: &Error) -> PcdoaStatus {
    let status = match e.category() {
        ErrorCategory::Domain | ErrorCategory::Config | ErrorCategory::Io => PcdoaStatus::InvalidArgument,
        ErrorCategory::Degenerate => PcdoaStatus::Degenerate,
        ErrorCategory::Numerical => PcdoaStatus::Numerical,
    };
    fail(status, &e.to_string())
}

/// Runs `f`, converting panics into [`PcdoaStatus::Panic`].
fn guard(f: impl FnOnce() -> PcdoaStatus) -> PcdoaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == PcdoaStatus::Ok {
                set_last_error("");
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PcdoaStatus::Panic, &format!("internal panic: {msg}"))
        }
    }
}

/// Column-major `rows × cols` complex matrix from split parts.
fn complex_matrix(re: &[f64], im: &[f64], rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_iterator(rows, cols, re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pcdoa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an estimator for an `num_sensors`-element array whose first
/// `num_calibrated` sensors are calibrated. `num_sources = 0` selects the
/// threshold peak rule; `noise_var < 0` estimates the noise variance.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_estimator_new(
    num_sensors: u32,
    num_calibrated: u32,
    num_sources: u32,
    noise_var: f64,
    out: *mut *mut PcdoaEstimator,
) -> PcdoaStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcdoaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let ula = match UlaConfig::new(num_sensors as usize, num_calibrated as usize) {
            Ok(u) => u,
            Err(e) => return from_error(&e),
        };
        let count = match num_sources {
            0 => SourceCount::Unknown,
            k => SourceCount::Known(k as usize),
        };
        let mut cfg = EstimatorConfig::new(ula, count);
        if noise_var >= 0.0 {
            cfg.noise = NoiseVariance::Known(noise_var);
        } else if noise_var.is_nan() {
            return fail(PcdoaStatus::InvalidArgument, "noise_var is NaN");
        }
        match TwoStageEstimator::new(cfg) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PcdoaEstimator { inner }));
                PcdoaStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases an estimator; null is ignored.
///
/// # Safety
/// `est` must be null or a handle from [`pcdoa_estimator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_estimator_free(est: *mut PcdoaEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Runs both stages on a snapshot matrix given as column-major real and
/// imaginary parts (`re[t*num_sensors + m]` is sensor `m`, snapshot `t`).
///
/// # Safety
/// `re` and `im` must each point to `num_sensors*num_snapshots` doubles;
/// `est` must be a live estimator and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_estimate(
    est: *const PcdoaEstimator,
    re: *const f64,
    im: *const f64,
    num_sensors: usize,
    num_snapshots: usize,
    out: *mut *mut PcdoaResult,
) -> PcdoaStatus {
    guard(|| {
        if est.is_null() || re.is_null() || im.is_null() || out.is_null() {
            return fail(PcdoaStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Some(len) = num_sensors.checked_mul(num_snapshots) else {
            return fail(PcdoaStatus::InvalidArgument, "matrix size overflows");
        };
        let re = std::slice::from_raw_parts(re, len);
        let im = std::slice::from_raw_parts(im, len);
        let z = match SnapshotMatrix::new(complex_matrix(re, im, num_sensors, num_snapshots)) {
            Ok(z) => z,
            Err(e) => return from_error(&e),
        };
        match (*est).inner.estimate(&z) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PcdoaResult { inner }));
                PcdoaStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a result; null is ignored.
///
/// # Safety
/// `res` must be null or a handle from [`pcdoa_estimate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_result_free(res: *mut PcdoaResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

fn parse_stage(stage: u32) -> Option<PcdoaStage> {
    match stage {
        1 => Some(PcdoaStage::One),
        2 => Some(PcdoaStage::Two),
        _ => None,
    }
}

fn stage_doas(r: &EstimationResult, stage: PcdoaStage) -> &[f64] {
    match stage {
        PcdoaStage::One => &r.stage1_doas_deg,
        PcdoaStage::Two => &r.stage2_doas_deg,
    }
}

fn stage_spectrum(r: &EstimationResult, stage: PcdoaStage) -> &SparseSpectrum {
    match stage {
        PcdoaStage::One => &r.stage1_spectrum,
        PcdoaStage::Two => &r.stage2_spectrum,
    }
}

/// Copies `src` into a caller buffer, always reporting the full length.
unsafe fn copy_out(src: &[f64], dst: *mut f64, capacity: usize, len: *mut usize) -> PcdoaStatus {
    if !len.is_null() {
        *len = src.len();
    }
    if src.len() > capacity {
        return fail(
            PcdoaStatus::BufferTooSmall,
            &format!("buffer holds {capacity} values, {} needed", src.len()),
        );
    }
    if !src.is_empty() {
        if dst.is_null() {
            return fail(PcdoaStatus::NullPointer, "output buffer is null");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    PcdoaStatus::Ok
}

/// Sorted DOAs (degrees) of one stage. `len` receives the count even when
/// the buffer is too small.
///
/// # Safety
/// `res` must be live; `out` must hold `capacity` doubles; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_result_doas(
    res: *const PcdoaResult,
    stage: u32,
    out: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> PcdoaStatus {
    guard(|| {
        if res.is_null() {
            return fail(PcdoaStatus::NullPointer, "result is null");
        }
        let Some(stage) = parse_stage(stage) else {
            return fail(PcdoaStatus::InvalidArgument, &format!("unknown stage {stage}"));
        };
        copy_out(stage_doas(&(*res).inner, stage), out, capacity, len)
    })
}

/// Gain-phase estimate, one complex value per sensor.
///
/// # Safety
/// `res` must be live; `re` and `im` must each hold `capacity` doubles;
/// `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_result_gain(
    res: *const PcdoaResult,
    re: *mut f64,
    im: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> PcdoaStatus {
    guard(|| {
        if res.is_null() {
            return fail(PcdoaStatus::NullPointer, "result is null");
        }
        let g = &(*res).inner.gain_phase_est;
        let parts_re: Vec<f64> = g.iter().map(|c| c.re).collect();
        let parts_im: Vec<f64> = g.iter().map(|c| c.im).collect();
        match copy_out(&parts_re, re, capacity, len) {
            PcdoaStatus::Ok => copy_out(&parts_im, im, capacity, len),
            s => s,
        }
    })
}

/// Grid angles and normalized spectrum values (maximum 1) of one stage.
///
/// # Safety
/// `res` must be live; `angles` and `values` must each hold `capacity`
/// doubles; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn pcdoa_result_spectrum(
    res: *const PcdoaResult,
    stage: u32,
    angles: *mut f64,
    values: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> PcdoaStatus {
    guard(|| {
        if res.is_null() {
            return fail(PcdoaStatus::NullPointer, "result is null");
        }
        let Some(stage) = parse_stage(stage) else {
            return fail(PcdoaStatus::InvalidArgument, &format!("unknown stage {stage}"));
        };
        let pairs = stage_spectrum(&(*res).inner, stage).normalized();
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let v: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        match copy_out(&a, angles, capacity, len) {
            PcdoaStatus::Ok => copy_out(&v, values, capacity, len),
            s => s,
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcdoa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
