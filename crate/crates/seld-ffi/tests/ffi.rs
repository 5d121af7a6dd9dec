//! Exercises the C ABI end to end: train a micro model in-process, then
//! drive it through the extern "C" surface exactly as a foreign caller
//! would.

use std::ffi::{CStr, CString};
use std::path::Path;

use seld_ffi::{
    seld_events_free, seld_last_error_message, seld_model_free, seld_model_infer_to_csv,
    seld_model_infer_wav, seld_model_load, seld_score_csv, seld_version, SeldEvent, SeldModel,
    SeldScoresC, SeldStatus,
};

use seld_core::config::RunConfig;
use seld_core::data::{synth_scene, DatasetPaths, SceneSpec};
use seld_core::features::{FeatureConfig, FeatureExtractor};
use seld_core::model::ModelConfig;
use seld_core::trainer;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn train_micro_model(root: &Path) -> (DatasetPaths, std::path::PathBuf) {
    let paths = DatasetPaths::new(root);
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { mhsa_layers: 1, ..ModelConfig::tiny() };
    cfg.train.batch_size = 2;
    cfg.train.epochs_phase1 = 1;
    cfg.train.epochs_phase2 = 0;
    cfg.dataset.train =
        SceneSpec { n_clips: 2, clip_secs: 4.0, event_rate: 0.5, ..Default::default() };
    cfg.dataset.test =
        SceneSpec { n_clips: 1, clip_secs: 4.0, event_rate: 0.5, seed: 3, ..Default::default() };
    synth_scene(&cfg.dataset.train, &paths, "train").unwrap();
    synth_scene(&cfg.dataset.test, &paths, "test").unwrap();
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    trainer::featurize_dataset(&paths, &extractor, &["train", "test"]).unwrap();
    let run_dir = root.join("run");
    trainer::train(&cfg, &paths, &run_dir, 1, None).unwrap();
    (paths, run_dir.join("ckpt_last"))
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(seld_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected_with_messages() {
    let mut handle: *mut SeldModel = std::ptr::null_mut();
    let status = unsafe { seld_model_load(std::ptr::null(), &mut handle) };
    assert_eq!(status, SeldStatus::NullArgument);
    let msg = unsafe { CStr::from_ptr(seld_last_error_message()) };
    assert!(!msg.to_str().unwrap().is_empty());

    let status = unsafe { seld_model_load(cpath(Path::new("x")).as_ptr(), std::ptr::null_mut()) };
    assert_eq!(status, SeldStatus::NullArgument);
}

#[test]
fn missing_checkpoint_reports_io_error() {
    let mut handle: *mut SeldModel = std::ptr::null_mut();
    let path = CString::new("/nonexistent/ckpt").unwrap();
    let status = unsafe { seld_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, SeldStatus::Io);
    assert!(handle.is_null());
    let msg = unsafe { CStr::from_ptr(seld_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("ckpt"));
}

#[test]
fn load_infer_score_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, ckpt) = train_micro_model(dir.path());

    let mut handle: *mut SeldModel = std::ptr::null_mut();
    let status = unsafe { seld_model_load(cpath(&ckpt).as_ptr(), &mut handle) };
    assert_eq!(status, SeldStatus::Ok, "load failed: {:?}", unsafe {
        CStr::from_ptr(seld_last_error_message())
    });
    assert!(!handle.is_null());

    // in-memory event buffer
    let wav = paths.wav_path("test", "clip0000");
    let mut events: *mut SeldEvent = std::ptr::null_mut();
    let mut len: usize = 0;
    let status =
        unsafe { seld_model_infer_wav(handle, cpath(&wav).as_ptr(), &mut events, &mut len) };
    assert_eq!(status, SeldStatus::Ok);
    if len > 0 {
        let slice = unsafe { std::slice::from_raw_parts(events, len) };
        for e in slice {
            assert!(e.frame < 40);
            assert!((-180.0..180.0).contains(&e.azimuth_deg));
            assert!((-90.0..=90.0).contains(&e.elevation_deg));
        }
    }
    unsafe { seld_events_free(events, len) };

    // CSV path + scoring of references against themselves
    let pred_csv = dir.path().join("pred.csv");
    let status =
        unsafe { seld_model_infer_to_csv(handle, cpath(&wav).as_ptr(), cpath(&pred_csv).as_ptr()) };
    assert_eq!(status, SeldStatus::Ok);
    assert!(pred_csv.exists());

    let ref_csv = paths.labels_path("test", "clip0000");
    let mut scores = SeldScoresC::default();
    let status = unsafe {
        seld_score_csv(cpath(&ref_csv).as_ptr(), cpath(&ref_csv).as_ptr(), 40, &mut scores)
    };
    assert_eq!(status, SeldStatus::Ok);
    assert_eq!(scores.error_rate, 0.0);
    assert_eq!(scores.f_score, 1.0);
    assert_eq!(scores.localization_error_deg, 0.0);
    assert_eq!(scores.localization_recall, 1.0);

    unsafe { seld_model_free(handle) };
}
