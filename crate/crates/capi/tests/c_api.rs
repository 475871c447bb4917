//! Exercises the exported C ABI exactly as a foreign caller would: through
//! raw pointers and NUL-terminated strings.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use normlab_capi::{
    nl_abi_version, nl_experiment_free, nl_experiment_new, nl_experiment_run_grid,
    nl_experiment_select, nl_experiment_train, nl_last_error, nl_self_check, nl_string_free,
    NlExperiment, NlStatus,
};

fn config_toml(out_dir: &str, with_grid: bool, total_steps: u32) -> CString {
    let grid = if with_grid {
        "\n[grid]\nlr_min = 1e-2\nlr_max = 5e-1\nwd_min = 1e-4\nwd_max = 1e-1\nn_lr = 2\nn_wd = 2\n"
    } else {
        ""
    };
    CString::new(format!(
        r#"
[arch]
family = "mlp-bn"
depth = 1
width = 16
num_classes = 4
input_shape = [1, 16, 16]

[optim]
alpha = 0.1
weight_decay = 0.001
momentum = 0.0
batch_size = 10
total_steps = {total_steps}
schedule = "cosine"

[data]
source = "synthetic"

[data.synthetic]
kind = "gaussian_blobs_image"
num_classes = 4
samples_per_class = 50
image_shape = [1, 16, 16]
class_separation = 40.0
noise_sigma = 25.0
seed = 7

[run]
seed = 3
output_dir = "{out_dir}"
{grid}"#
    ))
    .unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nl_last_error()).to_string_lossy().into_owned() }
}

fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let s = unsafe { CStr::from_ptr(ptr).to_string_lossy().into_owned() };
    unsafe { nl_string_free(ptr) };
    s
}

#[test]
fn abi_version_is_stable() {
    assert_eq!(nl_abi_version(), 1);
}

#[test]
fn train_through_the_ffi_returns_record_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_toml(dir.path().join("runs").to_str().unwrap(), false, 400);
    let mut exp: *mut NlExperiment = ptr::null_mut();
    let status = unsafe { nl_experiment_new(cfg.as_ptr(), &mut exp) };
    assert_eq!(status, NlStatus::Ok, "{}", last_error());
    assert!(!exp.is_null());

    let mut record: *mut c_char = ptr::null_mut();
    let status = unsafe { nl_experiment_train(exp, &mut record) };
    assert_eq!(status, NlStatus::Ok, "{}", last_error());
    let json = take_string(record);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["status"], "ok");
    assert!(value["norm_after_epoch1"].is_f64());
    assert!(dir.path().join("runs/records.jsonl").exists());

    unsafe { nl_experiment_free(exp) };
}

#[test]
fn grid_and_selection_through_the_ffi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_toml(dir.path().join("runs").to_str().unwrap(), true, 600);
    let mut exp: *mut NlExperiment = ptr::null_mut();
    assert_eq!(unsafe { nl_experiment_new(cfg.as_ptr(), &mut exp) }, NlStatus::Ok);

    // Training a gridded config is a config error.
    assert_eq!(
        unsafe { nl_experiment_train(exp, ptr::null_mut()) },
        NlStatus::Config,
        "{}",
        last_error()
    );

    assert_eq!(unsafe { nl_experiment_run_grid(exp, 2) }, NlStatus::Ok, "{}", last_error());
    let stored = std::fs::read_to_string(dir.path().join("runs/records.jsonl")).unwrap();
    assert_eq!(stored.lines().count(), 4);

    let mode = CString::new("min_norm").unwrap();
    let mut report: *mut c_char = ptr::null_mut();
    let status = unsafe { nl_experiment_select(exp, mode.as_ptr(), &mut report) };
    assert_eq!(status, NlStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
    assert_eq!(report["selection_mode"], "min_norm");
    assert!(report["chosen_run_id"].as_str().unwrap().starts_with("cell-"));

    let bad_mode = CString::new("coin_flip").unwrap();
    assert_eq!(
        unsafe { nl_experiment_select(exp, bad_mode.as_ptr(), ptr::null_mut()) },
        NlStatus::Config
    );
    assert!(last_error().contains("coin_flip"));

    unsafe { nl_experiment_free(exp) };
}

#[test]
fn errors_surface_through_status_and_message() {
    // Null arguments.
    let mut exp: *mut NlExperiment = ptr::null_mut();
    assert_eq!(unsafe { nl_experiment_new(ptr::null(), &mut exp) }, NlStatus::NullArg);
    assert_eq!(unsafe { nl_experiment_train(ptr::null_mut(), ptr::null_mut()) }, NlStatus::NullArg);

    // Unknown config keys are named.
    let bad = CString::new("[arch]\nfamily = \"mlp-bn\"\nmystery = 1\n").unwrap();
    assert_eq!(unsafe { nl_experiment_new(bad.as_ptr(), &mut exp) }, NlStatus::Config);
    assert!(last_error().contains("mystery"), "{}", last_error());

    // Invalid UTF-8.
    let invalid = [0x66u8, 0xfe, 0x00];
    assert_eq!(
        unsafe { nl_experiment_new(invalid.as_ptr() as *const c_char, &mut exp) },
        NlStatus::Utf8
    );
}

#[test]
fn self_check_passes() {
    assert_eq!(nl_self_check(), NlStatus::Ok, "{}", last_error());
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/normlab.h");
    let text = std::fs::read_to_string(&header).expect("header generated at build time");
    for symbol in [
        "nl_abi_version",
        "nl_last_error",
        "nl_string_free",
        "nl_experiment_new",
        "nl_experiment_from_file",
        "nl_experiment_free",
        "nl_experiment_train",
        "nl_experiment_run_grid",
        "nl_experiment_select",
        "nl_self_check",
        "NlExperiment",
        "NlStatus",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}
