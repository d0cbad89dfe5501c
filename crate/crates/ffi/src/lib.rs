//! C interface to the ldgec estimator.
//!
//! Handles are opaque and owned by the caller, who frees them with the
//! matching `*_free`. Every fallible call returns an [`LdgecStatus`]; on
//! failure `ldgec_last_error()` describes the problem until the next call on
//! the same thread. Complex vectors cross the boundary as interleaved
//! `re, im` doubles in the stacked subcarrier-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ldgec::baselines::{default_sparsity, ls_estimate, nmse, omp_estimate};
use ldgec::denoiser::{MatchedGaussianDenoiser, SureShrinkDenoiser};
use ldgec::experiment::config::SweepPoint;
use ldgec::experiment::{instance, Instance};
use ldgec::gec::{run_ldgec, GecConfig, Uniform};
use ldgec::rng::{substream, Stream};
use ldgec::{Complex64, Error, SystemConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdgecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdgecEstimator {
    /// Unfolded estimator with the SURE-tuned soft threshold.
    Ldgec = 0,
    /// Unfolded estimator with the matched Gaussian-prior denoiser.
    MatchedGaussian = 1,
    Ls = 2,
    Omp = 3,
}

/// A validated system configuration.
pub struct LdgecSystem {
    point: SweepPoint,
}

/// One simulated channel, its selection network and measurements.
pub struct LdgecInstance {
    inner: Instance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LdgecStatus {
    match e {
        Error::InvalidInput(_) | Error::NotACodeword { .. } => LdgecStatus::InvalidArgument,
        Error::Dimension { .. } => LdgecStatus::Dimension,
        Error::Config { .. } => LdgecStatus::Config,
        Error::Io(_) | Error::Format(_) => LdgecStatus::Io,
        _ => LdgecStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic for `ldgec_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (LdgecStatus, String)>) -> LdgecStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdgecStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            LdgecStatus::Panic
        }
    }
}

fn lift(e: Error) -> (LdgecStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (LdgecStatus, String) {
    (LdgecStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (LdgecStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (LdgecStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn complex_from(values: &[f64], expected: usize, what: &'static str) -> Result<Vec<Complex64>, (LdgecStatus, String)> {
    if values.len() != 2 * expected {
        return Err(lift(Error::Dimension {
            what,
            expected: 2 * expected,
            got: values.len(),
        }));
    }
    Ok(values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

fn write_complex(src: &[Complex64], out: &mut [f64], what: &'static str) -> Result<(), (LdgecStatus, String)> {
    if out.len() != 2 * src.len() {
        return Err(lift(Error::Dimension {
            what,
            expected: 2 * src.len(),
            got: out.len(),
        }));
    }
    for (o, c) in out.chunks_exact_mut(2).zip(src) {
        o[0] = c.re;
        o[1] = c.im;
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldgec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next ldgec call on the same thread.
#[no_mangle]
pub extern "C" fn ldgec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a system from a JSON object of system fields; NULL or "" gives
/// the desk-scale defaults.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldgec_system_new(config_json: *const c_char, out: *mut *mut LdgecSystem) -> LdgecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = if config_json.is_null() {
            ""
        } else {
            CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| (LdgecStatus::InvalidArgument, "config is not UTF-8".to_string()))?
        };
        let system: SystemConfig = if text.trim().is_empty() {
            SystemConfig::default()
        } else {
            ldgec::experiment::config::from_json_str(text).map_err(lift)?
        };
        system.validate().map_err(lift)?;
        let gec = GecConfig::for_system(&system);
        *out = Box::into_raw(Box::new(LdgecSystem {
            point: SweepPoint { system, gec },
        }));
        Ok(())
    })
}

/// # Safety
/// `sys` must be NULL or a handle from `ldgec_system_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ldgec_system_free(sys: *mut LdgecSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Complex entries in a channel (N·M); 0 for a NULL handle.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldgec_system_channel_len(sys: *const LdgecSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.point.system.channel_len())
}

/// Complex entries in a measurement vector (M·Q·N_RF); 0 for a NULL handle.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldgec_system_measurement_len(sys: *const LdgecSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.point.system.measurement_len())
}

/// Draws trial `trial` for master seed `seed`; the same pair gives the same
/// instance as the command-line sweep.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldgec_simulate(sys: *const LdgecSystem, seed: u64, trial: u64, out: *mut *mut LdgecInstance) -> LdgecStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("system"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let inner = instance(&sys.point, seed, trial as usize).map_err(lift)?;
        *out = Box::into_raw(Box::new(LdgecInstance { inner }));
        Ok(())
    })
}

/// # Safety
/// `inst` must be NULL or a handle from `ldgec_simulate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ldgec_instance_free(inst: *mut LdgecInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Copies the true channel into `out` (`len` = 2 × channel length).
///
/// # Safety
/// `inst` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldgec_instance_channel(inst: *const LdgecInstance, out: *mut f64, len: usize) -> LdgecStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        write_complex(&inst.inner.truth, slice_mut(out, len, "out")?, "channel buffer")
    })
}

/// Copies the (quantized) measurements into `out` (`len` = 2 × measurement length).
///
/// # Safety
/// `inst` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldgec_instance_measurements(inst: *const LdgecInstance, out: *mut f64, len: usize) -> LdgecStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        write_complex(&inst.inner.y, slice_mut(out, len, "out")?, "measurement buffer")
    })
}

/// Replaces the measurements, keeping the channel and selection network.
///
/// # Safety
/// `inst` must be a live handle and `values` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldgec_instance_set_measurements(inst: *mut LdgecInstance, values: *const f64, len: usize) -> LdgecStatus {
    guard(|| {
        let inst = inst.as_mut().ok_or_else(|| null("instance"))?;
        let y = complex_from(slice(values, len, "values")?, inst.inner.model.measurement_len(), "measurements")?;
        inst.inner.y = y;
        Ok(())
    })
}

/// Estimates the channel of `inst` into `out` (`len` = 2 × channel length).
/// `layers` = 0 keeps the system default; `probe_seed` drives the Monte
/// Carlo divergence probes.
///
/// # Safety
/// Handles must be live and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldgec_estimate(
    sys: *const LdgecSystem,
    inst: *const LdgecInstance,
    estimator: LdgecEstimator,
    layers: u32,
    probe_seed: u64,
    out: *mut f64,
    len: usize,
) -> LdgecStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("system"))?;
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        let out = slice_mut(out, len, "out")?;
        let (y, model) = (&inst.inner.y, &inst.inner.model);
        let mut gec = sys.point.gec.clone();
        if layers > 0 {
            gec.layers = layers as usize;
        }
        let mut probe = substream(probe_seed, Stream::Probe, 0);
        let h = match estimator {
            LdgecEstimator::Ls => ls_estimate(y, model),
            LdgecEstimator::Omp => omp_estimate(y, model, default_sparsity(sys.point.system.paths, model.antennas())),
            LdgecEstimator::Ldgec => run_ldgec(y, model, &gec, &Uniform(SureShrinkDenoiser::default()), &mut probe, None).map(|o| o.h_hat),
            LdgecEstimator::MatchedGaussian => {
                run_ldgec(y, model, &gec, &Uniform(MatchedGaussianDenoiser::default()), &mut probe, None).map(|o| o.h_hat)
            }
        }
        .map_err(lift)?;
        write_complex(&h, out, "estimate buffer")
    })
}

/// `‖est − truth‖² / ‖truth‖²` over `len` doubles of interleaved complex data.
///
/// # Safety
/// `est` and `truth` must be valid for `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ldgec_nmse(est: *const f64, truth: *const f64, len: usize, out: *mut f64) -> LdgecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !len.is_multiple_of(2) {
            return Err((LdgecStatus::InvalidArgument, format!("odd length {len} for interleaved complex data")));
        }
        let a = complex_from(slice(est, len, "est")?, len / 2, "estimate")?;
        let b = complex_from(slice(truth, len, "truth")?, len / 2, "truth")?;
        *out = nmse(&a, &b).map_err(lift)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::InvalidInput("x".into())), LdgecStatus::InvalidArgument);
        assert_eq!(
            status_of(&Error::Dimension {
                what: "y",
                expected: 1,
                got: 2
            }),
            LdgecStatus::Dimension
        );
        assert_eq!(status_of(&Error::Factorization { subcarrier: 0 }), LdgecStatus::Numerical);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, LdgecStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ldgec_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("boom"), "{msg}");
        assert_eq!(guard(|| Ok(())), LdgecStatus::Ok);
        assert!(ldgec_last_error().is_null());
    }
}
