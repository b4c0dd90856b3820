use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mcflow_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mcflow_last_error()) }.to_string_lossy().into_owned()
}

fn annulus() -> *mut McflowDomain {
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { mcflow_domain_annulus(0.5, &mut d) }, McflowStatus::Ok);
    d
}

#[test]
fn harmonic_measure_matches_the_log_profile() {
    let d = annulus();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(mcflow_domain_components(d), 2);
        assert_eq!(mcflow_harmonic_measure(d, 1, 24, &mut h), McflowStatus::Ok);
        let (mut v, mut g) = (0.0, [0.0; 2]);
        assert_eq!(mcflow_harmonic_eval(h, 0.3, 0.5, &mut v, g.as_mut_ptr()), McflowStatus::Ok);
        let r = 0.3f64.hypot(0.5);
        assert!((v - r.ln() / 0.5f64.ln()).abs() < 1e-10);
        let dr = 1.0 / (r * 0.5f64.ln());
        assert!((g[0] - dr * 0.3 / r).abs() < 1e-9 && (g[1] - dr * 0.5 / r).abs() < 1e-9);
        assert_eq!(mcflow_harmonic_eval(h, 0.3, 0.5, &mut v, ptr::null_mut()), McflowStatus::Ok);
        mcflow_harmonic_free(h);
        mcflow_domain_free(d);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(mcflow_domain_annulus(1.5, &mut d), McflowStatus::InvalidDomain);
        assert!(d.is_null());
        assert!(last_error().contains("geometry.invalid-domain"), "{}", last_error());
        assert_eq!(mcflow_domain_annulus(0.5, ptr::null_mut()), McflowStatus::NullPointer);
        let d = annulus();
        assert!(last_error().is_empty());
        let mut h = ptr::null_mut();
        assert_eq!(mcflow_harmonic_measure(d, 7, 24, &mut h), McflowStatus::InvalidArgument);
        let mut inside = true;
        assert_eq!(mcflow_domain_contains(d, 0.1, 0.0, &mut inside), McflowStatus::Ok);
        assert!(!inside);
        assert_eq!(mcflow_domain_contains(ptr::null(), 0.1, 0.0, &mut inside), McflowStatus::NullPointer);
        mcflow_domain_free(d);
        mcflow_domain_free(ptr::null_mut());
    }
}

#[test]
fn symmetric_pair_has_one_saddle() {
    let centers = [-0.4, 0.0, 0.4, 0.0];
    let radii = [0.15, 0.15];
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(mcflow_domain_new(centers.as_ptr(), radii.as_ptr(), 2, &mut d), McflowStatus::Ok);
        let mut h = ptr::null_mut();
        // 1 - harmonic measure of the outer circle: constant on each hole
        assert_eq!(mcflow_harmonic_measure(d, 0, 24, &mut h), McflowStatus::Ok);
        let mut count = 0usize;
        assert_eq!(
            mcflow_critical_points(d, h, ptr::null_mut(), ptr::null_mut(), 0, &mut count),
            McflowStatus::BufferTooSmall
        );
        assert_eq!(count, 1);
        let (mut xy, mut m) = ([0.0; 2], [0i32; 1]);
        assert_eq!(mcflow_critical_points(d, h, xy.as_mut_ptr(), m.as_mut_ptr(), 1, &mut count), McflowStatus::Ok);
        assert!(xy[0].hypot(xy[1]) < 1e-8 && m[0] == 1);
        mcflow_harmonic_free(h);
        mcflow_domain_free(d);
    }
}

#[test]
fn green_function_is_symmetric_and_rejects_boundary_sources() {
    let d = annulus();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(mcflow_green_new(d, 32, &mut g), McflowStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(mcflow_green_eval(g, 0.7, 0.1, -0.2, 0.6, &mut a, ptr::null_mut()), McflowStatus::Ok);
        assert_eq!(mcflow_green_eval(g, -0.2, 0.6, 0.7, 0.1, &mut b, ptr::null_mut()), McflowStatus::Ok);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        let mut grad = [0.0; 2];
        assert_eq!(mcflow_green_eval(g, 0.7, 0.1, 0.0, 1.0, &mut a, grad.as_mut_ptr()), McflowStatus::OutsideDomain);
        mcflow_green_free(g);
        mcflow_domain_free(d);
    }
}

#[test]
fn parses_circular_domain_text() {
    let text = CString::new("[[holes]]\ncenter = [0.2, 0.0]\nradius = 0.3\n").unwrap();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(mcflow_domain_parse(text.as_ptr(), &mut d), McflowStatus::Ok);
        assert_eq!(mcflow_domain_components(d), 2);
        mcflow_domain_free(d);
        let bad = CString::new("holes = 3").unwrap();
        assert_eq!(mcflow_domain_parse(bad.as_ptr(), &mut d), McflowStatus::InvalidDomain);
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "mcflow.h"

int main(void) {
    McflowDomain *d = NULL;
    if (mcflow_domain_annulus(0.5, &d) != MCFLOW_STATUS_OK) return 1;
    McflowHarmonic *h = NULL;
    if (mcflow_harmonic_measure(d, 1, 24, &h) != MCFLOW_STATUS_OK) return 2;
    double v = 0.0;
    if (mcflow_harmonic_eval(h, 0.75, 0.0, &v, NULL) != MCFLOW_STATUS_OK) return 3;
    if (fabs(v - log(0.75) / log(0.5)) > 1e-10) return 4;
    if (mcflow_domain_annulus(0.25, NULL) != MCFLOW_STATUS_NULL_POINTER) return 5;
    printf("%s|%s\n", mcflow_version(), mcflow_last_error());
    mcflow_harmonic_free(h);
    mcflow_domain_free(d);
    return 0;
}
"#;

/// Compiles a C client against the generated header and the static library.
#[test]
fn c_client_links_against_the_static_library() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = target.join("libmcflow_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("client");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")));
    assert!(stdout.contains("out is null"), "{stdout}");
}
