use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use earlyact::checkpoint;
use earlyact::harness::TrainConfig;
use earlyact::predictor::{Mode, Model};
use earlyact::synth::{generate_clip, CorpusConfig};
use earlyact::video::FullVideo;
use earlyact_ffi::*;

fn small_model(mode: Mode) -> Model {
    let mut cfg = TrainConfig::default().model;
    cfg.hidden = 8;
    cfg.mode = mode;
    Model::new(cfg, 4).unwrap()
}

fn clip() -> FullVideo {
    let cfg = CorpusConfig::staircase(0.3, 1);
    generate_clip(&cfg.classes[2], &cfg, 77).unwrap()
}

fn flat(frames: &[earlyact::Tensor]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.data().iter().copied()).collect()
}

fn load(dir: &Path, model: &Model) -> *mut EaModel {
    let path = dir.join("m.ckpt");
    checkpoint::save(&path, model, 4).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ea_model_load(c.as_ptr(), &mut handle) }, EaStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ea_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn info_reports_model_shape() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(Mode::Full);
    let h = load(dir.path(), &model);
    let (mut n, mut k, mut c, mut hh, mut w) = (0, 0, 0, 0, 0);
    let status = unsafe { ea_model_info(h, &mut n, &mut k, &mut c, &mut hh, &mut w) };
    assert_eq!(status, EaStatus::Ok);
    assert_eq!((n, k, (c, hh, w)), (model.config.num_classes, model.config.segments, model.config.frame));
    assert_eq!(unsafe { ea_model_info(h, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, EaStatus::Ok);
    unsafe { ea_model_free(h) };
}

#[test]
fn predict_partial_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(Mode::Full);
    let h = load(dir.path(), &model);
    let video = clip();
    let frames = flat(&video.frames);
    let classes = model.config.num_classes;
    let k = 4;
    let mut logits = vec![0.0; k * classes];
    let status = unsafe { ea_predict_partial(h, frames.as_ptr(), video.len(), k, 10, logits.as_mut_ptr(), logits.len()) };
    assert_eq!(status, EaStatus::Ok);
    let expected: Vec<f64> = model
        .predict_partial(&video, k, 10)
        .unwrap()
        .iter()
        .flat_map(|o| o.logits.data().to_vec())
        .collect();
    assert_eq!(logits, expected);
    unsafe { ea_model_free(h) };
}

#[test]
fn streaming_matches_batch_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(Mode::Full);
    let h = load(dir.path(), &model);
    let video = clip();
    let segments = earlyact::video::split_segments(&video, 10).unwrap();
    let batch = model.predict_partial(&video, 10, 10).unwrap();

    let mut state = ptr::null_mut();
    assert_eq!(unsafe { ea_state_new(h, &mut state) }, EaStatus::Ok);
    let mut logits = vec![0.0; model.config.num_classes];
    for (i, seg) in segments.iter().enumerate() {
        let frames = flat(seg.frames(&video));
        let status = unsafe { ea_state_step(h, state, frames.as_ptr(), seg.len(), logits.as_mut_ptr(), logits.len()) };
        assert_eq!(status, EaStatus::Ok);
        assert_eq!(unsafe { ea_state_segments_seen(state) }, i + 1);
        assert_eq!(&logits[..], batch[i].logits.data());
    }
    unsafe {
        ea_state_free(state);
        ea_model_free(h);
    }
}

#[test]
fn failed_step_leaves_state_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(Mode::Full);
    let h = load(dir.path(), &model);
    let video = clip();
    let frames = flat(&video.frames[..6]);
    let mut state = ptr::null_mut();
    assert_eq!(unsafe { ea_state_new(h, &mut state) }, EaStatus::Ok);
    let mut short = vec![0.0; model.config.num_classes - 1];
    let status = unsafe { ea_state_step(h, state, frames.as_ptr(), 6, short.as_mut_ptr(), short.len()) };
    assert_eq!(status, EaStatus::InvalidArgument);
    assert!(last_error().contains("output buffer"));
    assert_eq!(unsafe { ea_state_segments_seen(state) }, 0);
    unsafe {
        ea_state_free(state);
        ea_model_free(h);
    }
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ea_model_load(ptr::null(), &mut handle) }, EaStatus::NullPointer);
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/dir/model.ckpt").unwrap();
    assert_eq!(unsafe { ea_model_load(missing.as_ptr(), &mut handle) }, EaStatus::Io);
    assert!(handle.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ea_model_load(junk.as_ptr(), &mut handle) }, EaStatus::Format);

    let model = small_model(Mode::Full);
    let h = load(dir.path(), &model);
    let mut out = [0.0; 4];
    assert_eq!(unsafe { ea_predict_partial(h, ptr::null(), 60, 1, 10, out.as_mut_ptr(), 4) }, EaStatus::NullPointer);
    let frames = flat(&clip().frames);
    assert_ne!(unsafe { ea_predict_partial(h, frames.as_ptr(), 60, 11, 10, out.as_mut_ptr(), 4) }, EaStatus::Ok);
    assert!(!last_error().is_empty());
    unsafe {
        ea_model_free(h);
        ea_model_free(ptr::null_mut());
        ea_state_free(ptr::null_mut());
    }
    assert_eq!(unsafe { ea_state_segments_seen(ptr::null()) }, 0);
}

#[test]
fn streaming_requires_recurrent_model() {
    let dir = tempfile::tempdir().unwrap();
    let h = load(dir.path(), &small_model(Mode::SegmentOnly));
    let mut state = ptr::null_mut();
    assert_eq!(unsafe { ea_state_new(h, &mut state) }, EaStatus::Config);
    assert!(state.is_null());
    unsafe { ea_model_free(h) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(ea_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_parses_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/earlyact.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ea_model_load",
        "ea_model_free",
        "ea_model_info",
        "ea_state_new",
        "ea_state_free",
        "ea_state_segments_seen",
        "ea_state_step",
        "ea_predict_partial",
        "ea_last_error_message",
        "ea_version",
        "EA_STATUS_INTERNAL = 8",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
