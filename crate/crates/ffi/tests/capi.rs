use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use pcdoa::array_model::UlaConfig;
use pcdoa::scene_sim::{draw_gain_phase, generate_snapshots, SceneTruth, SourceTruth};
use pcdoa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pcdoa_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn snapshots() -> (Vec<f64>, Vec<f64>) {
    let ula = UlaConfig::new(16, 8).unwrap();
    let scene = SceneTruth::new(
        ula,
        vec![SourceTruth::new(-20.0, 0.5, 1.0, 20), SourceTruth::new(25.0, 0.5, 1.0, 20)],
        draw_gain_phase(0.1, 40.0, &ula, 5).unwrap(),
        0.1,
    )
    .unwrap();
    let z = generate_snapshots(&scene, 200, 6).unwrap();
    (z.data().iter().map(|c| c.re).collect(), z.data().iter().map(|c| c.im).collect())
}

struct Handles {
    est: *mut PcdoaEstimator,
    res: *mut PcdoaResult,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            pcdoa_result_free(self.res);
            pcdoa_estimator_free(self.est);
        }
    }
}

fn run() -> Handles {
    let (re, im) = snapshots();
    let mut h = Handles {
        est: ptr::null_mut(),
        res: ptr::null_mut(),
    };
    unsafe {
        assert_eq!(pcdoa_estimator_new(16, 8, 2, -1.0, &mut h.est), PcdoaStatus::Ok);
        assert_eq!(
            pcdoa_estimate(h.est, re.as_ptr(), im.as_ptr(), 16, 200, &mut h.res),
            PcdoaStatus::Ok,
            "{}",
            last_error()
        );
    }
    h
}

#[test]
fn round_trip_matches_rust_api() {
    let h = run();
    let mut doas = [0.0; 4];
    let mut len = 0usize;
    unsafe {
        assert_eq!(pcdoa_result_doas(h.res, 2, doas.as_mut_ptr(), 4, &mut len), PcdoaStatus::Ok);
    }
    assert_eq!(len, 2);
    assert!((doas[0] + 20.0).abs() <= 1.0 && (doas[1] - 25.0).abs() <= 1.0, "{doas:?}");
    assert_eq!(last_error(), "");

    let (mut gre, mut gim) = ([0.0; 16], [0.0; 16]);
    unsafe {
        assert_eq!(pcdoa_result_gain(h.res, gre.as_mut_ptr(), gim.as_mut_ptr(), 16, &mut len), PcdoaStatus::Ok);
    }
    assert_eq!(len, 16);
    assert!(gre[..8].iter().all(|&v| v == 1.0) && gim[..8].iter().all(|&v| v == 0.0));

    let mut angles = vec![0.0; 360];
    let mut values = vec![0.0; 360];
    unsafe {
        assert_eq!(
            pcdoa_result_spectrum(h.res, 1, angles.as_mut_ptr(), values.as_mut_ptr(), 360, &mut len),
            PcdoaStatus::Ok
        );
    }
    assert_eq!(len, 360);
    assert_eq!(values.iter().cloned().fold(0.0, f64::max), 1.0);
    assert_eq!(angles[359], 90.0);
}

#[test]
fn small_buffer_reports_needed_length() {
    let h = run();
    let mut one = [0.0; 1];
    let mut len = 0usize;
    let status = unsafe { pcdoa_result_doas(h.res, 1, one.as_mut_ptr(), 1, &mut len) };
    assert_eq!(status, PcdoaStatus::BufferTooSmall);
    assert_eq!(len, 2);
    assert!(last_error().contains("needed"));
}

#[test]
fn invalid_arguments_are_reported() {
    let mut est = ptr::null_mut();
    unsafe {
        assert_eq!(pcdoa_estimator_new(4, 8, 1, -1.0, &mut est), PcdoaStatus::InvalidArgument);
        assert!(est.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(pcdoa_estimator_new(16, 8, 1, -1.0, ptr::null_mut()), PcdoaStatus::NullPointer);
        assert_eq!(pcdoa_estimator_new(16, 8, 1, f64::NAN, &mut est), PcdoaStatus::InvalidArgument);
    }
    let h = run();
    let mut out = [0.0; 4];
    unsafe {
        assert_eq!(pcdoa_result_doas(h.res, 3, out.as_mut_ptr(), 4, ptr::null_mut()), PcdoaStatus::InvalidArgument);
        assert_eq!(pcdoa_result_doas(ptr::null(), 1, out.as_mut_ptr(), 4, ptr::null_mut()), PcdoaStatus::NullPointer);
    }
}

#[test]
fn wrong_row_count_is_rejected() {
    let mut est = ptr::null_mut();
    let mut res = ptr::null_mut();
    let data = vec![0.5; 8 * 10];
    unsafe {
        assert_eq!(pcdoa_estimator_new(16, 8, 1, -1.0, &mut est), PcdoaStatus::Ok);
        let status = pcdoa_estimate(est, data.as_ptr(), data.as_ptr(), 8, 10, &mut res);
        assert_eq!(status, PcdoaStatus::InvalidArgument);
        assert!(res.is_null());
        assert!(last_error().contains("snapshot rows"), "{}", last_error());
        pcdoa_estimator_free(est);
    }
}

#[test]
fn free_accepts_null() {
    unsafe {
        pcdoa_estimator_free(ptr::null_mut());
        pcdoa_result_free(ptr::null_mut());
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(pcdoa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = header_dir.join("pcdoa.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["pcdoa_estimator_new", "pcdoa_estimate", "pcdoa_result_free", "PCDOA_STATUS_OK"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"pcdoa.h\"\nint main(void) {\n  PcdoaEstimator *e = 0;\n  \
         PcdoaStatus s = pcdoa_estimator_new(16, 8, 2, -1.0, &e);\n  pcdoa_estimator_free(e);\n  \
         return s == PCDOA_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler available; header syntax check skipped");
            return;
        }
    };
    assert!(status.success());
}
