//! Log-space (learning rate x weight decay) grids, parallel orchestration of
//! training runs over the grid, and newline-delimited record persistence.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Real;
use crate::trainer::{
    train_run, CellIndex, ProbeChange, ProbeRecord, RunMetrics, RunRecord, RunStatus, TrainConfig,
};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::Log
    }
}

/// Endpoint-inclusive grid over (learning rate, weight decay) in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lr_min: f64,
    pub lr_max: f64,
    pub wd_min: f64,
    pub wd_max: f64,
    pub n_lr: usize,
    pub n_wd: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in
            [("lr", self.lr_min, self.lr_max), ("wd", self.wd_min, self.wd_max)]
        {
            if !(lo > 0.0) || !(hi > 0.0) {
                return Err(Error::Config(format!("{name} bounds must be positive")));
            }
            if lo > hi {
                return Err(Error::Config(format!("{name}_min {lo} exceeds {name}_max {hi}")));
            }
        }
        if self.n_lr < 1 || self.n_wd < 1 {
            return Err(Error::Config("grid point counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n_lr * self.n_wd
    }
}

/// `n` points with logarithms equally spaced between log(min) and log(max),
/// endpoints included exactly.
pub fn log_axis(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max > 0.0) || min > max || n < 1 {
        return Err(Error::Config(format!("invalid log axis [{min}, {max}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (lmin, lmax) = (min.ln(), max.ln());
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                min
            } else if i == n - 1 {
                max
            } else {
                (lmin + (lmax - lmin) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

/// All (alpha, weight decay) pairs in row-major order: weight decay outer,
/// learning rate inner. Cell index = lambda_idx * n_lr + alpha_idx.
pub fn make_grid(spec: &GridSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let lrs = log_axis(spec.lr_min, spec.lr_max, spec.n_lr)?;
    let wds = log_axis(spec.wd_min, spec.wd_max, spec.n_wd)?;
    let mut cells = Vec::with_capacity(spec.cells());
    for &wd in &wds {
        for &lr in &lrs {
            cells.push((lr, wd));
        }
    }
    Ok(cells)
}

/// A grid execution: spec, base config, and the per-cell records sorted by
/// (lambda_idx, alpha_idx).
#[derive(Debug, Clone)]
pub struct GridRun {
    pub grid: GridSpec,
    pub base: TrainConfig,
    pub records: Vec<RunRecord>,
    pub storage_path: PathBuf,
}

/// The config a given cell trains with: base plus the cell's (alpha, wd)
/// and a seed derived from (base seed, cell index).
pub fn cell_config(base: &TrainConfig, grid: &GridSpec, cell_idx: usize) -> Result<TrainConfig> {
    let cells = make_grid(grid)?;
    let (alpha, wd) = cells[cell_idx];
    let mut cfg = base.clone();
    cfg.alpha = alpha;
    cfg.weight_decay = wd;
    cfg.seed = derive_seed(base.seed, "grid-cell", cell_idx as u64);
    Ok(cfg)
}

fn cell_run_id(li: usize, ai: usize) -> String {
    format!("cell-l{li}-a{ai}")
}

/// Train every grid cell not already present in `storage` with a worker
/// pool, appending each record to `storage` as it completes. Results are
/// identical regardless of the worker count. Returns all records (existing
/// plus new) sorted by cell.
pub fn run_grid<F: Real>(
    grid: &GridSpec,
    base: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    val: Option<&Dataset>,
    parallelism: usize,
    storage: &Path,
) -> Result<GridRun> {
    grid.validate()?;
    base.validate()?;
    if parallelism < 1 {
        return Err(Error::Config("parallelism must be >= 1".into()));
    }
    let cells = make_grid(grid)?;
    let existing = if storage.exists() { load_records(storage)? } else { Vec::new() };
    let done: std::collections::HashSet<(usize, usize)> =
        existing.iter().filter_map(|r| r.cell.map(|c| (c.lambda_idx, c.alpha_idx))).collect();

    let pending: Vec<usize> = (0..cells.len())
        .filter(|ci| {
            let (li, ai) = (ci / grid.n_lr, ci % grid.n_lr);
            !done.contains(&(li, ai))
        })
        .collect();

    if let Some(dir) = storage.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(storage)
        .map_err(|e| Error::io(storage.display().to_string(), e))?;

    let sink: Mutex<(std::fs::File, Vec<RunRecord>)> = Mutex::new((file, Vec::new()));
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    let workers = parallelism.min(pending.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                if slot >= pending.len() {
                    break;
                }
                if first_error.lock().unwrap().is_some() {
                    break;
                }
                let ci = pending[slot];
                let (li, ai) = (ci / grid.n_lr, ci % grid.n_lr);
                let outcome = cell_config(base, grid, ci).and_then(|cfg| {
                    let mut record = train_run::<F>(&cfg, train, test, val)?;
                    record.run_id = cell_run_id(li, ai);
                    record.cell = Some(CellIndex { lambda_idx: li, alpha_idx: ai });
                    Ok(record)
                });
                match outcome {
                    Ok(record) => {
                        let mut guard = sink.lock().unwrap();
                        let line = record_to_line(&record);
                        let (file, records) = &mut *guard;
                        if let Err(e) = writeln!(file, "{line}") {
                            *first_error.lock().unwrap() =
                                Some(Error::io(storage.display().to_string(), e));
                            break;
                        }
                        records.push(record);
                    }
                    Err(e) => {
                        *first_error.lock().unwrap() = Some(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let (_, new_records) = sink.into_inner().unwrap();
    let mut records = existing;
    records.extend(new_records);
    records.sort_by_key(|r| r.cell.map(|c| (c.lambda_idx, c.alpha_idx)));
    if records.iter().all(|r| r.status == RunStatus::Failed) {
        return Err(Error::Orchestration(format!(
            "all {} grid cells failed; widen the grid or lower the learning rate",
            records.len()
        )));
    }
    Ok(GridRun { grid: *grid, base: base.clone(), records, storage_path: storage.to_path_buf() })
}

fn status_str(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Ok => "ok",
        RunStatus::Failed => "failed",
    }
}

/// Flat single-line JSON encoding of a record.
pub fn record_to_line(r: &RunRecord) -> String {
    let m = r.metrics.as_ref();
    let probes: Vec<Value> = r
        .probes
        .iter()
        .map(|p| {
            json!({
                "step": p.step,
                "base_loss": p.base_loss,
                "grad_dot": p.grad_dot,
                "cosine": p.cosine,
                "changes": p.changes.iter().map(|c| json!({"c": c.c, "rel_change": c.rel_change})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let value = json!({
        "schema_version": SCHEMA_VERSION,
        "status": status_str(r.status),
        "run_id": r.run_id,
        "lambda_idx": r.cell.map(|c| c.lambda_idx),
        "alpha_idx": r.cell.map(|c| c.alpha_idx),
        "config": serde_json::to_value(&r.config).expect("config serializes"),
        "final_train_accuracy": m.map(|m| m.final_train_accuracy),
        "final_train_loss": m.map(|m| m.final_train_loss),
        "test_loss": m.map(|m| m.test_loss),
        "test_accuracy": m.map(|m| m.test_accuracy),
        "norm_after_epoch1": m.map(|m| m.norm_after_epoch1),
        "val_loss": m.and_then(|m| m.val_loss),
        "val_accuracy": m.and_then(|m| m.val_accuracy),
        "failed_at_step": r.failed_at_step,
        "norm_trajectory": r.norm_trajectory,
        "test_acc_trajectory": r.test_acc_trajectory,
        "steps_completed": r.steps_completed,
        "wall_seconds": r.wall_seconds,
        "probes": probes,
    });
    value.to_string()
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::RecordParse { line, message: message.into() }
}

fn field<'a>(obj: &'a Value, key: &str, line: usize) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| parse_err(line, format!("missing field `{key}`")))
}

fn req_f64(obj: &Value, key: &str, line: usize) -> Result<f64> {
    field(obj, key, line)?
        .as_f64()
        .ok_or_else(|| parse_err(line, format!("missing field `{key}` (null or non-numeric)")))
}

fn opt_f64(obj: &Value, key: &str, line: usize) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| parse_err(line, format!("field `{key}` is not numeric"))),
    }
}

fn req_u64(obj: &Value, key: &str, line: usize) -> Result<u64> {
    field(obj, key, line)?
        .as_u64()
        .ok_or_else(|| parse_err(line, format!("field `{key}` is not an unsigned integer")))
}

fn f64_array(obj: &Value, key: &str, line: usize) -> Result<Vec<f64>> {
    field(obj, key, line)?
        .as_array()
        .ok_or_else(|| parse_err(line, format!("field `{key}` is not an array")))?
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| parse_err(line, format!("non-numeric entry in `{key}`"))))
        .collect()
}

/// Parse one persisted line (1-based line number for error reporting).
pub fn record_from_line(text: &str, line: usize) -> Result<RunRecord> {
    let obj: Value =
        serde_json::from_str(text).map_err(|e| parse_err(line, format!("invalid JSON: {e}")))?;
    let version = req_u64(&obj, "schema_version", line)?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: version, expected: SCHEMA_VERSION });
    }
    let status = match field(&obj, "status", line)?.as_str() {
        Some("ok") => RunStatus::Ok,
        Some("failed") => RunStatus::Failed,
        other => return Err(parse_err(line, format!("unknown status {other:?}"))),
    };
    let run_id = field(&obj, "run_id", line)?
        .as_str()
        .ok_or_else(|| parse_err(line, "field `run_id` is not a string"))?
        .to_string();
    let cell = match (obj.get("lambda_idx"), obj.get("alpha_idx")) {
        (Some(Value::Null), _) | (_, Some(Value::Null)) | (None, None) => None,
        (Some(l), Some(a)) => {
            let li = l.as_u64().ok_or_else(|| parse_err(line, "field `lambda_idx` is not an integer"))?;
            let ai = a.as_u64().ok_or_else(|| parse_err(line, "field `alpha_idx` is not an integer"))?;
            Some(CellIndex { lambda_idx: li as usize, alpha_idx: ai as usize })
        }
        _ => return Err(parse_err(line, "cell indices must appear together")),
    };
    let config: TrainConfig = serde_json::from_value(field(&obj, "config", line)?.clone())
        .map_err(|e| parse_err(line, format!("invalid config: {e}")))?;
    let metrics = match status {
        RunStatus::Ok => Some(RunMetrics {
            final_train_accuracy: req_f64(&obj, "final_train_accuracy", line)?,
            final_train_loss: req_f64(&obj, "final_train_loss", line)?,
            test_loss: req_f64(&obj, "test_loss", line)?,
            test_accuracy: req_f64(&obj, "test_accuracy", line)?,
            norm_after_epoch1: req_f64(&obj, "norm_after_epoch1", line)?,
            val_loss: opt_f64(&obj, "val_loss", line)?,
            val_accuracy: opt_f64(&obj, "val_accuracy", line)?,
        }),
        RunStatus::Failed => None,
    };
    let failed_at_step = match obj.get("failed_at_step") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| parse_err(line, "field `failed_at_step` is not an integer"))?,
        ),
    };
    let probes = match obj.get("probes") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|p| {
                let changes = match p.get("changes") {
                    Some(Value::Array(cs)) => cs
                        .iter()
                        .map(|c| {
                            Ok(ProbeChange {
                                c: req_f64(c, "c", line)?,
                                rel_change: req_f64(c, "rel_change", line)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                    _ => Vec::new(),
                };
                Ok(ProbeRecord {
                    step: req_u64(p, "step", line)?,
                    base_loss: req_f64(p, "base_loss", line)?,
                    grad_dot: req_f64(p, "grad_dot", line)?,
                    cosine: req_f64(p, "cosine", line)?,
                    changes,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(parse_err(line, "field `probes` is not an array")),
    };
    Ok(RunRecord {
        run_id,
        cell,
        config,
        status,
        failed_at_step,
        metrics,
        norm_trajectory: f64_array(&obj, "norm_trajectory", line)?,
        test_acc_trajectory: f64_array(&obj, "test_acc_trajectory", line)?,
        steps_completed: req_u64(&obj, "steps_completed", line)?,
        wall_seconds: req_f64(&obj, "wall_seconds", line)?,
        probes,
    })
}

/// Write records as newline-delimited JSON, one record per line.
pub fn save_records(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&record_to_line(r));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load records saved by [`save_records`] (or appended by [`run_grid`]).
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(record_from_line(&line, i + 1)?);
    }
    Ok(records)
}
