//! C ABI for the normlab training laboratory.
//!
//! Conventions:
//! - Every fallible call returns an [`NlStatus`]; `NL_STATUS_OK` is zero.
//! - On failure a thread-local message is available via [`nl_last_error`]
//!   until the next call on the same thread.
//! - Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`nl_string_free`].
//! - `NlExperiment` is an opaque handle; create with [`nl_experiment_new`]
//!   or [`nl_experiment_from_file`], release with [`nl_experiment_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use normlab::config::{ExperimentConfig, LoadedData};
use normlab::search::{load_records, record_to_line, run_grid, save_records};
use normlab::select::{selection_report, SelectionMode, FIT_THRESHOLD};
use normlab::trainer::{train_run, RunStatus};
use normlab::Error;

/// Result codes. Nonzero values align with the CLI exit codes where one
/// exists for the same failure class.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NlStatus {
    Ok = 0,
    /// Configuration, input, or I/O problem.
    Config = 2,
    /// Non-finite numerics during training or evaluation.
    Numeric = 3,
    /// No run satisfied the selection criteria.
    Selection = 4,
    /// Self-check suite reported failures.
    Check = 5,
    /// A required pointer argument was null.
    NullArg = 10,
    /// A string argument was not valid UTF-8.
    Utf8 = 11,
    /// An internal panic was caught at the boundary.
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul-free message");
    });
}

fn status_for(err: &Error) -> NlStatus {
    match err {
        Error::Numerical { .. }
        | Error::DecayDivergence { .. }
        | Error::Orchestration(_)
        | Error::UndefinedCosine
        | Error::UndefinedCorrelation { .. } => NlStatus::Numeric,
        Error::NoFittedModel { .. } => NlStatus::Selection,
        _ => NlStatus::Config,
    }
}

fn fail(err: Error) -> NlStatus {
    set_error(&err.to_string());
    status_for(&err)
}

/// Run `f` behind a panic guard, translating panics into `NL_STATUS_PANIC`.
fn guarded<F: FnOnce() -> NlStatus>(f: F) -> NlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in normlab".into());
            set_error(&msg);
            NlStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, NlStatus> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(NlStatus::NullArg);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        NlStatus::Utf8
    })
}

fn give_string(out: *mut *mut c_char, body: String) -> NlStatus {
    if out.is_null() {
        set_error("null out-parameter");
        return NlStatus::NullArg;
    }
    let sanitized: String = body.chars().filter(|&c| c != '\0').collect();
    let cstring = CString::new(sanitized).expect("nul-free body");
    unsafe { *out = cstring.into_raw() };
    NlStatus::Ok
}

/// An experiment bound to its parsed config and materialized datasets.
pub struct NlExperiment {
    config: ExperimentConfig,
    data: LoadedData,
}

impl NlExperiment {
    fn records_path(&self) -> PathBuf {
        Path::new(&self.config.run.output_dir).join("records.jsonl")
    }

    fn ensure_output_dir(&self) -> Result<(), Error> {
        let dir = Path::new(&self.config.run.output_dir);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
    }
}

/// ABI revision; bump on any breaking change to this header.
#[no_mangle]
pub extern "C" fn nl_abi_version() -> u32 {
    1
}

/// Message describing the most recent failure on this thread. Borrowed;
/// valid until the next failing call. Never null.
#[no_mangle]
pub extern "C" fn nl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Release a string returned through a `char **` out-parameter.
#[no_mangle]
pub unsafe extern "C" fn nl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn experiment_from_config(config: ExperimentConfig, out: *mut *mut NlExperiment) -> NlStatus {
    if out.is_null() {
        set_error("null out-parameter");
        return NlStatus::NullArg;
    }
    match config.load_data() {
        Ok(data) => {
            let handle = Box::new(NlExperiment { config, data });
            unsafe { *out = Box::into_raw(handle) };
            NlStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parse a TOML experiment config and materialize its datasets.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_new(
    config_toml: *const c_char,
    out: *mut *mut NlExperiment,
) -> NlStatus {
    guarded(|| {
        let text = match utf8_arg(config_toml) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match ExperimentConfig::from_toml(text) {
            Ok(cfg) => experiment_from_config(cfg, out),
            Err(e) => fail(e),
        }
    })
}

/// As [`nl_experiment_new`], reading the config from a file path.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_from_file(
    path: *const c_char,
    out: *mut *mut NlExperiment,
) -> NlStatus {
    guarded(|| {
        let path = match utf8_arg(path) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match ExperimentConfig::from_path(path) {
            Ok(cfg) => experiment_from_config(cfg, out),
            Err(e) => fail(e),
        }
    })
}

/// Release an experiment handle.
///
/// # Safety
/// `exp` must be null or a pointer obtained from an `nl_experiment_*`
/// constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_free(exp: *mut NlExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

unsafe fn experiment_arg<'a>(exp: *mut NlExperiment) -> Result<&'a mut NlExperiment, NlStatus> {
    if exp.is_null() {
        set_error("null experiment handle");
        return Err(NlStatus::NullArg);
    }
    Ok(&mut *exp)
}

/// Train the single run described by the config, persist its record under
/// the config's output directory, and return the record as a JSON string.
/// A run that diverges returns `NL_STATUS_NUMERIC` (the failed record is
/// still written and returned).
///
/// # Safety
/// `exp` must be a live handle; `record_json` may be null (the record is
/// then only persisted).
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_train(
    exp: *mut NlExperiment,
    record_json: *mut *mut c_char,
) -> NlStatus {
    guarded(|| {
        let exp = match experiment_arg(exp) {
            Ok(e) => e,
            Err(status) => return status,
        };
        if exp.config.grid.is_some() {
            return fail(Error::Config(
                "config has a [grid] section; use nl_experiment_run_grid".into(),
            ));
        }
        let cfg = match exp.config.train_config() {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let record =
            match train_run::<f32>(&cfg, &exp.data.train, &exp.data.test, exp.data.val.as_ref()) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
        if let Err(e) = exp
            .ensure_output_dir()
            .and_then(|()| save_records(std::slice::from_ref(&record), &exp.records_path()))
        {
            return fail(e);
        }
        if !record_json.is_null() {
            let status = give_string(record_json, record_to_line(&record));
            if status != NlStatus::Ok {
                return status;
            }
        }
        if record.status == RunStatus::Ok {
            NlStatus::Ok
        } else {
            set_error(&format!(
                "run diverged at step {}",
                record.failed_at_step.unwrap_or_default()
            ));
            NlStatus::Numeric
        }
    })
}

/// Run the config's grid with the given worker count, appending records to
/// `<output_dir>/records.jsonl`. Completed cells are skipped on re-runs.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_run_grid(
    exp: *mut NlExperiment,
    workers: u32,
) -> NlStatus {
    guarded(|| {
        let exp = match experiment_arg(exp) {
            Ok(e) => e,
            Err(status) => return status,
        };
        let Some(grid) = exp.config.grid else {
            return fail(Error::Config("config has no [grid] section".into()));
        };
        let base = match exp.config.train_config() {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if let Err(e) = exp.ensure_output_dir() {
            return fail(e);
        }
        match run_grid::<f32>(
            &grid,
            &base,
            &exp.data.train,
            &exp.data.test,
            exp.data.val.as_ref(),
            workers.max(1) as usize,
            &exp.records_path(),
        ) {
            Ok(_) => NlStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Select a model from the experiment's stored records. `mode` is
/// `"min_norm"` or `"best_validation"`; the report is returned as JSON.
///
/// # Safety
/// `exp` must be a live handle; `mode` a valid string; `report_json` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn nl_experiment_select(
    exp: *mut NlExperiment,
    mode: *const c_char,
    report_json: *mut *mut c_char,
) -> NlStatus {
    guarded(|| {
        let exp = match experiment_arg(exp) {
            Ok(e) => e,
            Err(status) => return status,
        };
        let mode = match utf8_arg(mode) {
            Ok("min_norm") => SelectionMode::MinNorm,
            Ok("best_validation") => SelectionMode::BestValidation,
            Ok(other) => {
                return fail(Error::Config(format!(
                    "unknown selection mode {other:?}; use min_norm or best_validation"
                )))
            }
            Err(status) => return status,
        };
        let records = match load_records(&exp.records_path()) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        match selection_report(&records, mode, FIT_THRESHOLD) {
            Ok(report) => {
                if report_json.is_null() {
                    NlStatus::Ok
                } else {
                    give_string(
                        report_json,
                        serde_json::to_string(&report).expect("report serializes"),
                    )
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// Run the invariant self-check suite; returns `NL_STATUS_CHECK` with the
/// failing item names in [`nl_last_error`] if anything fails.
#[no_mangle]
pub extern "C" fn nl_self_check() -> NlStatus {
    guarded(|| {
        let items = normlab::check::run_self_check();
        let failures: Vec<String> = items
            .iter()
            .filter_map(|item| item.result.as_ref().err().map(|e| format!("{}: {e}", item.name)))
            .collect();
        if failures.is_empty() {
            NlStatus::Ok
        } else {
            set_error(&failures.join("; "));
            NlStatus::Check
        }
    })
}
