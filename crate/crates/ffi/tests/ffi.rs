use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use sidescreen::config::{Profile, ToolkitConfig};
use sidescreen::model::{enroll, save_model, ScreeningModel};
use sidescreen::sim::generate_dataset;
use sidescreen::trace::{write_traceset, Scenario, TraceSet};
use sidescreen_ffi::*;

struct Fixture {
    dir: tempfile::TempDir,
    model: ScreeningModel,
    traces: TraceSet,
}

/// A one-epoch desk-geometry model and a small delay-scenario file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = ToolkitConfig::profile(Profile::Desk);
        cfg.train.epochs = 1;
        cfg.train.batch = 16;
        let benign = generate_dataset(&cfg.sim, 100, &cfg.payload.payload(Scenario::Benign)).unwrap();
        let model = enroll(&benign, &cfg.preprocess, &cfg.train, &[0.05, 0.1], |_| {})
            .unwrap()
            .model;
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path().join("m.pscm")).unwrap();
        let traces = generate_dataset(&cfg.sim, 12, &cfg.payload.payload(Scenario::Delay)).unwrap();
        write_traceset(&traces, dir.path().join("t.psct")).unwrap();
        Fixture { dir, model, traces }
    })
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ss_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(f: &Fixture) -> *mut SsModel {
    let mut m = ptr::null_mut();
    let st = unsafe { ss_model_load(cpath(&f.dir.path().join("m.pscm")).as_ptr(), &mut m) };
    assert_eq!(st, SsStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn scores_match_library() {
    let f = fixture();
    let m = load(f);
    let flat: Vec<f64> = f.traces.traces().iter().flat_map(|t| t.samples().to_vec()).collect();
    let n = f.traces.len();
    let mut scores = vec![0.0; n];
    let st = unsafe { ss_score(m, flat.as_ptr(), n, f.traces.trace_len(), scores.as_mut_ptr()) };
    assert_eq!(st, SsStatus::Ok);
    assert_eq!(scores, f.model.scores(&f.traces).unwrap());

    // Window-length input scores the same as raw input.
    let (mut window, mut start, mut end) = (0, 0, 0);
    assert_eq!(unsafe { ss_model_geometry(m, &mut window, &mut start, &mut end) }, SsStatus::Ok);
    assert_eq!((window, start, end), (256, 344, 600));
    let cropped: Vec<f64> = f
        .traces
        .traces()
        .iter()
        .flat_map(|t| t.samples()[start..end].to_vec())
        .collect();
    let mut again = vec![0.0; n];
    assert_eq!(
        unsafe { ss_score(m, cropped.as_ptr(), n, window, again.as_mut_ptr()) },
        SsStatus::Ok
    );
    assert_eq!(again, scores);
    unsafe { ss_model_free(m) };
}

#[test]
fn screen_flags_follow_tau() {
    let f = fixture();
    let m = load(f);
    let flat: Vec<f64> = f.traces.traces().iter().flat_map(|t| t.samples().to_vec()).collect();
    let n = f.traces.len();
    let scores = f.model.scores(&f.traces).unwrap();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let tau = sorted[n / 2];
    let mut flags = vec![9u8; n];
    let mut flagged = 0;
    let st = unsafe { ss_screen(m, flat.as_ptr(), n, 600, tau, flags.as_mut_ptr(), &mut flagged) };
    assert_eq!(st, SsStatus::Ok);
    for (fl, s) in flags.iter().zip(&scores) {
        assert_eq!(*fl, u8::from(*s >= tau));
    }
    assert_eq!(flagged, flags.iter().filter(|&&x| x == 1).count());
    let st = unsafe { ss_screen(m, flat.as_ptr(), n, 600, f64::NAN, flags.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, SsStatus::InvalidArgument);
    unsafe { ss_model_free(m) };
}

#[test]
fn thresholds() {
    let f = fixture();
    let m = load(f);
    let mut count = 0;
    assert_eq!(unsafe { ss_model_threshold_count(m, &mut count) }, SsStatus::Ok);
    assert_eq!(count, 2);
    let (mut fpr, mut tau) = (0.0, 0.0);
    assert_eq!(unsafe { ss_model_threshold_at(m, 1, &mut fpr, &mut tau) }, SsStatus::Ok);
    assert_eq!((fpr, tau), (0.1, f.model.thresholds[1].tau));
    assert_eq!(unsafe { ss_model_threshold_at(m, 2, &mut fpr, &mut tau) }, SsStatus::InvalidArgument);
    assert_eq!(unsafe { ss_model_threshold(m, 0.05, &mut tau) }, SsStatus::Ok);
    assert_eq!(tau, f.model.thresholds[0].tau);
    assert_eq!(unsafe { ss_model_threshold(m, 0.01, &mut tau) }, SsStatus::NoThreshold);
    assert!(last_error().contains("available: 0.05, 0.1"));
    unsafe { ss_model_free(m) };
}

#[test]
fn traceset_access() {
    let f = fixture();
    let mut s = ptr::null_mut();
    let st = unsafe { ss_traceset_read(cpath(&f.dir.path().join("t.psct")).as_ptr(), &mut s) };
    assert_eq!(st, SsStatus::Ok);
    let (mut n, mut len) = (0, 0);
    assert_eq!(unsafe { ss_traceset_len(s, &mut n, &mut len) }, SsStatus::Ok);
    assert_eq!((n, len), (12, 600));
    let (mut p, mut l) = (ptr::null(), 0);
    assert_eq!(unsafe { ss_traceset_samples(s, 3, &mut p, &mut l) }, SsStatus::Ok);
    assert_eq!(unsafe { std::slice::from_raw_parts(p, l) }, f.traces.traces()[3].samples());
    let mut label = ptr::null();
    assert_eq!(unsafe { ss_traceset_label(s, 0, &mut label) }, SsStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(label) }.to_str().unwrap(), "delay");
    assert_eq!(unsafe { ss_traceset_samples(s, 12, &mut p, &mut l) }, SsStatus::InvalidArgument);

    let m = load(f);
    let mut scores = vec![0.0; n];
    assert_eq!(unsafe { ss_score_traceset(m, s, scores.as_mut_ptr(), n) }, SsStatus::Ok);
    assert_eq!(scores, f.model.scores(&f.traces).unwrap());
    assert_eq!(
        unsafe { ss_score_traceset(m, s, scores.as_mut_ptr(), n - 1) },
        SsStatus::InvalidArgument
    );
    unsafe {
        ss_model_free(m);
        ss_traceset_free(s);
    }
}

#[test]
fn error_statuses() {
    let f = fixture();
    let mut m = ptr::null_mut();
    let missing = cpath(&f.dir.path().join("missing.pscm"));
    assert_eq!(unsafe { ss_model_load(missing.as_ptr(), &mut m) }, SsStatus::Io);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let junk = f.dir.path().join("junk.pscm");
    std::fs::write(&junk, b"NOPE0000000000").unwrap();
    assert_eq!(unsafe { ss_model_load(cpath(&junk).as_ptr(), &mut m) }, SsStatus::Format);
    assert!(last_error().contains("magic"));

    assert_eq!(unsafe { ss_model_load(ptr::null(), &mut m) }, SsStatus::NullPointer);
    assert_eq!(unsafe { ss_model_load(missing.as_ptr(), ptr::null_mut()) }, SsStatus::NullPointer);
    let mut count = 0;
    assert_eq!(unsafe { ss_model_threshold_count(ptr::null(), &mut count) }, SsStatus::NullPointer);

    let model = load(f);
    let short = [0.0f64; 100];
    let mut score = 0.0;
    assert_eq!(unsafe { ss_score(model, short.as_ptr(), 1, 100, &mut score) }, SsStatus::Shape);
    let bad = [f64::NAN; 600];
    assert_eq!(unsafe { ss_score(model, bad.as_ptr(), 1, 600, &mut score) }, SsStatus::Data);
    assert_eq!(unsafe { ss_score(model, short.as_ptr(), 0, 100, &mut score) }, SsStatus::Ok);
    unsafe {
        ss_model_free(model);
        ss_model_free(ptr::null_mut());
        ss_traceset_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ss_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sidescreen.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ss_model_load", "ss_screen", "ss_traceset_read", "ss_last_error", "SS_STATUS_NO_THRESHOLD"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
