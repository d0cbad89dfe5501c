use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ldgec_ffi::*;

const TINY: &str = r#"{"antennas": 8, "rf_chains": 2, "pilot_instants": 4, "subcarriers": 4, "paths": 2}"#;

fn system(json: &str) -> *mut LdgecSystem {
    let c = CString::new(json).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { ldgec_system_new(c.as_ptr(), &mut sys) }, LdgecStatus::Ok);
    sys
}

fn last_error() -> String {
    let p = ldgec_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulate_estimate_score() {
    let sys = system(TINY);
    let n = 2 * unsafe { ldgec_system_channel_len(sys) };
    assert_eq!(n, 2 * 8 * 4);
    assert_eq!(unsafe { ldgec_system_measurement_len(sys) }, 4 * 4 * 2);
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { ldgec_simulate(sys, 3, 1, &mut inst) }, LdgecStatus::Ok);
    let mut truth = vec![0.0; n];
    assert_eq!(unsafe { ldgec_instance_channel(inst, truth.as_mut_ptr(), n) }, LdgecStatus::Ok);

    let mut scores = Vec::new();
    for est in [LdgecEstimator::Ldgec, LdgecEstimator::MatchedGaussian, LdgecEstimator::Ls, LdgecEstimator::Omp] {
        let mut h = vec![0.0; n];
        assert_eq!(unsafe { ldgec_estimate(sys, inst, est, 0, 5, h.as_mut_ptr(), n) }, LdgecStatus::Ok);
        let mut e = f64::NAN;
        assert_eq!(unsafe { ldgec_nmse(h.as_ptr(), truth.as_ptr(), n, &mut e) }, LdgecStatus::Ok);
        assert!(e.is_finite() && e >= 0.0);
        scores.push(e);
    }
    assert!(scores[0] < scores[2], "{scores:?}");

    // same seed and trial as the library's own instance
    let sweep_point = ldgec::experiment::config::SweepPoint {
        system: serde_json::from_str(TINY).unwrap(),
        gec: ldgec::gec::GecConfig::default(),
    };
    let direct = ldgec::experiment::instance(&sweep_point, 3, 1).unwrap();
    let flat: Vec<f64> = direct.truth.iter().flat_map(|c| [c.re, c.im]).collect();
    assert_eq!(flat, truth);

    unsafe {
        ldgec_instance_free(inst);
        ldgec_system_free(sys);
    }
}

#[test]
fn replaced_measurements_are_used() {
    let sys = system(TINY);
    let mut inst = ptr::null_mut();
    unsafe { ldgec_simulate(sys, 1, 0, &mut inst) };
    let m = 2 * unsafe { ldgec_system_measurement_len(sys) };
    let n = 2 * unsafe { ldgec_system_channel_len(sys) };
    let zeros = vec![0.0; m];
    assert_eq!(unsafe { ldgec_instance_set_measurements(inst, zeros.as_ptr(), m) }, LdgecStatus::Ok);
    let mut h = vec![1.0; n];
    assert_eq!(unsafe { ldgec_estimate(sys, inst, LdgecEstimator::Ls, 0, 0, h.as_mut_ptr(), n) }, LdgecStatus::Ok);
    assert!(h.iter().all(|&x| x == 0.0));
    assert_eq!(unsafe { ldgec_instance_set_measurements(inst, zeros.as_ptr(), m - 2) }, LdgecStatus::Dimension);
    unsafe {
        ldgec_instance_free(inst);
        ldgec_system_free(sys);
    }
}

#[test]
fn errors_are_reported() {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { ldgec_system_new(ptr::null(), ptr::null_mut()) }, LdgecStatus::NullPointer);
    let bad = CString::new(r#"{"antenas": 8}"#).unwrap();
    assert_eq!(unsafe { ldgec_system_new(bad.as_ptr(), &mut sys) }, LdgecStatus::Config);
    assert!(sys.is_null());
    assert!(last_error().contains("antenas"));
    let zero = CString::new(r#"{"antennas": 0}"#).unwrap();
    assert_ne!(unsafe { ldgec_system_new(zero.as_ptr(), &mut sys) }, LdgecStatus::Ok);

    let mut out = 0.0;
    let a = [1.0, 0.0];
    assert_eq!(unsafe { ldgec_nmse(a.as_ptr(), ptr::null(), 2, &mut out) }, LdgecStatus::NullPointer);
    assert_eq!(unsafe { ldgec_nmse(a.as_ptr(), a.as_ptr(), 1, &mut out) }, LdgecStatus::InvalidArgument);
    assert_eq!(unsafe { ldgec_nmse(a.as_ptr(), a.as_ptr(), 2, &mut out) }, LdgecStatus::Ok);
    assert_eq!(out, 0.0);
    assert!(ldgec_last_error().is_null());

    unsafe {
        ldgec_system_free(ptr::null_mut());
        ldgec_instance_free(ptr::null_mut());
    }
    assert_eq!(unsafe { ldgec_system_channel_len(ptr::null()) }, 0);
    let v = unsafe { CStr::from_ptr(ldgec_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn static_lib() -> Option<PathBuf> {
    // tests/ → deps/ → <profile>/
    let exe = std::env::current_exe().ok()?;
    let profile = exe.parent()?.parent()?;
    let lib = profile.join("libldgec_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_header() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built next to the test binary; skipping C link check");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C link check");
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke test exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
}
