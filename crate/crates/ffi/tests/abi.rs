use std::ffi::{CStr, CString};
use std::ptr;

use qdhole_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qdh_last_error()) }.to_string_lossy().into_owned()
}

fn small_config(toml: &str) -> *mut QdhConfig {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qdh_config_from_toml(text.as_ptr(), &mut cfg) }, QDH_OK, "{}", last_error());
    cfg
}

#[test]
fn run_ramsey_through_handles() {
    let cfg = small_config("[sweep.ramsey]\ntau = { start = 0.0, stop = 3.0e-10, points = 61 }\n");
    assert_eq!(unsafe { qdh_config_set_run(cfg, 7, 2000) }, QDH_OK);
    let kind = CString::new("ramsey").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { qdh_run(cfg, kind.as_ptr(), &mut res) }, QDH_OK, "{}", last_error());
    let n = unsafe { qdh_result_points(res) };
    assert_eq!(n, 61);
    assert_eq!(unsafe { qdh_result_series(res) }, 1);

    let mut counts = vec![f64::NAN; n];
    assert_eq!(unsafe { qdh_result_counts(res, 0, counts.as_mut_ptr(), n) }, QDH_OK);
    assert!(counts.iter().all(|c| c.is_finite() && *c >= 0.0));
    assert_eq!(unsafe { qdh_result_counts(res, 0, counts.as_mut_ptr(), n - 1) }, QDH_ERR_INVALID);
    assert_eq!(unsafe { qdh_result_counts(res, 5, counts.as_mut_ptr(), n) }, QDH_ERR_INVALID);

    let key = CString::new("frequency_hz").unwrap();
    let mut f = 0.0;
    assert_eq!(unsafe { qdh_result_derived(res, key.as_ptr(), &mut f) }, QDH_OK, "{}", last_error());
    assert!((f / 30.2e9 - 1.0).abs() < 0.05, "fringe frequency {f}");
    let missing = CString::new("nope").unwrap();
    assert_eq!(unsafe { qdh_result_derived(res, missing.as_ptr(), &mut f) }, QDH_ERR_INVALID);
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { qdh_result_require_fits(res) }, QDH_OK);

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { qdh_result_csv(res, &mut csv) }, QDH_OK);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert!(text.starts_with('#'));
    assert!(text.lines().any(|l| l == "# seed = 7"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), n + 1);
    unsafe { qdh_string_free(csv) };

    let mut report = ptr::null_mut();
    assert_eq!(unsafe { qdh_result_report(res, &mut report) }, QDH_OK);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(report) }.to_str().unwrap()).unwrap();
    assert_eq!(json["schema"], 1);
    unsafe { qdh_string_free(report) };

    unsafe {
        qdh_result_free(res);
        qdh_config_free(cfg);
    }
}

#[test]
fn error_codes() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("[system]\ngamma_sp_per_ns = -1.0\n").unwrap();
    assert_eq!(unsafe { qdh_config_from_toml(bad.as_ptr(), &mut cfg) }, QDH_ERR_CONFIG);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    let unknown = CString::new("[system]\nwarp = 9\n").unwrap();
    assert_eq!(unsafe { qdh_config_from_toml(unknown.as_ptr(), &mut cfg) }, QDH_ERR_CONFIG);
    assert_eq!(unsafe { qdh_config_from_toml(ptr::null(), &mut cfg) }, QDH_ERR_INVALID);

    assert_eq!(unsafe { qdh_config_default(&mut cfg) }, QDH_OK);
    let kind = CString::new("teleport").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { qdh_run(cfg, kind.as_ptr(), &mut res) }, QDH_ERR_CONFIG);
    assert!(res.is_null());
    assert_eq!(unsafe { qdh_run(ptr::null(), kind.as_ptr(), &mut res) }, QDH_ERR_INVALID);
    assert_eq!(unsafe { qdh_result_points(ptr::null()) }, 0);
    unsafe {
        qdh_config_free(cfg);
        qdh_config_free(ptr::null_mut());
        qdh_result_free(ptr::null_mut());
        qdh_string_free(ptr::null_mut());
    }
}

#[test]
fn fit_failure_is_code_three() {
    let cfg = small_config("[sweep.t1]\ntau = { values = [0.0, 1.0e-6] }\n");
    let kind = CString::new("t1").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { qdh_run(cfg, kind.as_ptr(), &mut res) }, QDH_OK, "{}", last_error());
    assert_eq!(unsafe { qdh_result_require_fits(res) }, QDH_ERR_FIT);
    unsafe {
        qdh_result_free(res);
        qdh_config_free(cfg);
    }
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qdh_config_default(&mut cfg) }, QDH_OK);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qdh_config_to_toml(cfg, &mut s) }, QDH_OK);
    let again = small_config(unsafe { CStr::from_ptr(s) }.to_str().unwrap());
    unsafe {
        qdh_string_free(s);
        qdh_config_free(cfg);
        qdh_config_free(again);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/qdhole.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for code in ["QDH_OK 0", "QDH_ERR_CONFIG 1", "QDH_ERR_RUNTIME 2", "QDH_ERR_FIT 3", "QDH_ERR_INVALID -1"] {
        assert!(header.contains(code), "{code}");
    }
    assert!(header.contains("typedef struct QdhConfig QdhConfig;"));
    assert!(header.contains("typedef struct QdhResult QdhResult;"));
    assert!(unsafe { CStr::from_ptr(qdh_version()) }.to_str().unwrap() == env!("CARGO_PKG_VERSION"));
}
