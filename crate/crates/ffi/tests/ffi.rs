use std::ffi::{c_char, CString};
use std::ptr;

use fastslow_ffi::*;

fn builtin(name: &str, eps: f64) -> *mut FsSystem {
    let name = CString::new(name).unwrap();
    let mut sys = ptr::null_mut();
    let st = unsafe { fs_system_builtin(name.as_ptr(), eps, &mut sys) };
    assert_eq!(st, FsStatus::Ok);
    assert!(!sys.is_null());
    sys
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { fs_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn step_matches_the_core_map() {
    let sys = builtin("sys-b", 0.01);
    let core = fastslow::config::builtin_system("sys-b", 0.01).unwrap();
    let (mut x, mut th) = (0.3, 0.7);
    let mut p = fastslow::TorusPoint::new(x, th);
    for _ in 0..50 {
        assert_eq!(unsafe { fs_step(sys, &mut x, &mut th) }, FsStatus::Ok);
        p = core.step(p);
    }
    assert_eq!((x, th), (p.x, p.theta));
    assert_eq!(unsafe { fs_system_epsilon(sys) }, 0.01);
    unsafe { fs_system_free(sys) };
}

#[test]
fn density_is_normalized() {
    let sys = builtin("sys-a", 0.01);
    let n = 64;
    let mut v = vec![0.0; n];
    let st = unsafe { fs_invariant_density(sys, 0.2, n, 1e-12, v.as_mut_ptr()) };
    assert_eq!(st, FsStatus::Ok);
    let mean = v.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 1e-6, "mean {mean}");
    unsafe { fs_system_free(sys) };
}

#[test]
fn classify_reports_sys_b_as_contracting_at_the_sink() {
    let sys = builtin("sys-b", 0.01);
    let mut class = FsClass::Marginal;
    let mut psi = f64::NAN;
    let st = unsafe { fs_classify(sys, &mut class, &mut psi, ptr::null_mut()) };
    assert_eq!(st, FsStatus::Ok);
    assert!(psi.is_finite());
    let core = fastslow::config::builtin_system("sys-b", 0.01).unwrap();
    let c = fastslow::averaging::classify_system(&core).unwrap();
    assert_eq!(psi, c.psi_bar_star_at_sink);
    unsafe { fs_system_free(sys) };
}

#[test]
fn errors_are_reported() {
    let mut sys = ptr::null_mut();
    let bad = CString::new("sys-z").unwrap();
    let st = unsafe { fs_system_builtin(bad.as_ptr(), 0.01, &mut sys) };
    assert_eq!(st, FsStatus::Validation);
    assert!(sys.is_null());
    assert!(!last_error().is_empty());

    let toml = CString::new("not = [valid").unwrap();
    let st = unsafe { fs_system_from_toml(toml.as_ptr(), &mut sys) };
    assert_eq!(st, FsStatus::Validation);

    assert_eq!(unsafe { fs_system_builtin(ptr::null(), 0.01, &mut sys) }, FsStatus::NullPointer);
    let (mut x, mut th) = (0.0, 0.0);
    assert_eq!(unsafe { fs_step(ptr::null(), &mut x, &mut th) }, FsStatus::NullPointer);
    assert!(unsafe { fs_system_epsilon(ptr::null()) }.is_nan());
    unsafe { fs_system_free(ptr::null_mut()) };
}

#[test]
fn toml_round_trip() {
    let core = fastslow::config::builtin_system("reference", 0.02).unwrap();
    let text = CString::new(core.to_toml()).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { fs_system_from_toml(text.as_ptr(), &mut sys) }, FsStatus::Ok);
    assert_eq!(unsafe { fs_system_epsilon(sys) }, 0.02);
    unsafe { fs_system_free(sys) };
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fastslow.h")).unwrap();
    for f in [
        "fs_system_builtin",
        "fs_system_from_toml",
        "fs_system_free",
        "fs_system_epsilon",
        "fs_step",
        "fs_invariant_density",
        "fs_classify",
        "fs_central_lyapunov",
        "fs_last_error",
        "FS_STATUS_NUMERICAL",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}
