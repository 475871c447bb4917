//! normlab command-line interface.
//!
//! Exit codes: 0 ok, 2 config/usage, 3 numerical failure, 4 selection
//! impossible, 5 self-check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use normlab::check::run_self_check;
use normlab::config::ExperimentConfig;
use normlab::report::{paired_csv, write_report, ReportKind};
use normlab::search::{load_records, run_grid, save_records};
use normlab::select::{selection_report, SelectionMode, FIT_THRESHOLD};
use normlab::trainer::{train_run, RunRecord, RunStatus};
use normlab::Error;

pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Parser)]
#[command(name = "normlab", version, about = "Small-data training laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    #[value(name = "min_norm")]
    MinNorm,
    #[value(name = "best_validation")]
    BestValidation,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Heatmap,
    Scatter,
    Trajectory,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a single run described by a config file
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the (learning rate x weight decay) grid of a config file
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (defaults to LAB_WORKERS, then 1)
        #[arg(long, env = "LAB_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Select a model from stored run records
    Select {
        /// Directory holding records.jsonl
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "min_norm")]
        mode: ModeArg,
        /// Training-accuracy threshold for a run to count as fitted
        #[arg(long, default_value_t = FIT_THRESHOLD)]
        threshold: f64,
    },
    /// Emit figure data (CSV, optionally SVG) from stored run records
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Also render a single-file SVG per report
        #[arg(long, default_value_t = false)]
        svg: bool,
    },
    /// Paired per-cell comparison of two grid run directories
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fast invariant self-check suite
    Check,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Input(_)
        | Error::Data(_)
        | Error::Format(_)
        | Error::Range(_)
        | Error::RecordParse { .. }
        | Error::SchemaVersion { .. }
        | Error::Io { .. } => 2,
        Error::Numerical { .. }
        | Error::DecayDivergence { .. }
        | Error::Orchestration(_)
        | Error::UndefinedCosine
        | Error::UndefinedCorrelation { .. } => 3,
        Error::NoFittedModel { .. } => 4,
    }
}

fn records_path(runs_dir: &Path) -> PathBuf {
    runs_dir.join(RECORDS_FILE)
}

fn load_runs(dir: &Path) -> Result<Vec<RunRecord>, Error> {
    let path = records_path(dir);
    if !path.exists() {
        return Err(Error::Input(format!("no {RECORDS_FILE} under {}", dir.display())));
    }
    load_records(&path)
}

fn print_record_summary(record: &RunRecord) {
    match (&record.status, &record.metrics) {
        (RunStatus::Ok, Some(m)) => {
            println!(
                "run {}: train acc {:.4} (loss {:.6}), test acc {:.4} (loss {:.6}), |theta| after epoch 1 = {:.6}",
                record.run_id,
                m.final_train_accuracy,
                m.final_train_loss,
                m.test_accuracy,
                m.test_loss,
                m.norm_after_epoch1
            );
            if let (Some(vl), Some(va)) = (m.val_loss, m.val_accuracy) {
                println!("  validation acc {va:.4} (loss {vl:.6})");
            }
        }
        _ => println!(
            "run {}: FAILED at step {} (non-finite update)",
            record.run_id,
            record.failed_at_step.unwrap_or(0)
        ),
    }
}

fn cmd_train(config: &Path) -> Result<u8, Error> {
    let cfg = ExperimentConfig::from_path(config)?;
    if cfg.grid.is_some() {
        return Err(Error::Config(
            "config has a [grid] section; use the grid command".into(),
        ));
    }
    let data = cfg.load_data()?;
    let record =
        train_run::<f32>(&cfg.train_config()?, &data.train, &data.test, data.val.as_ref())?;
    let out_dir = PathBuf::from(&cfg.run.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    save_records(std::slice::from_ref(&record), &records_path(&out_dir))?;
    print_record_summary(&record);
    println!("record written to {}", records_path(&out_dir).display());
    Ok(if record.status == RunStatus::Ok { 0 } else { 3 })
}

fn cmd_grid(config: &Path, workers: usize) -> Result<u8, Error> {
    let cfg = ExperimentConfig::from_path(config)?;
    let grid = cfg.grid.ok_or_else(|| {
        Error::Config("config has no [grid] section; use the train command".into())
    })?;
    let data = cfg.load_data()?;
    let out_dir = PathBuf::from(&cfg.run.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let storage = records_path(&out_dir);
    let run = run_grid::<f32>(
        &grid,
        &cfg.train_config()?,
        &data.train,
        &data.test,
        data.val.as_ref(),
        workers,
        &storage,
    )?;
    let ok = run.records.iter().filter(|r| r.is_ok()).count();
    let failed = run.records.len() - ok;
    let fitted = run
        .records
        .iter()
        .filter(|r| {
            r.metrics.as_ref().is_some_and(|m| m.final_train_accuracy >= FIT_THRESHOLD)
        })
        .count();
    let best = run
        .records
        .iter()
        .filter_map(|r| r.metrics.as_ref().map(|m| m.test_accuracy))
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "grid complete: {} cells ({ok} ok, {failed} failed, {fitted} fitted); best test accuracy {best:.4}",
        run.records.len()
    );
    println!("records in {}", storage.display());
    Ok(0)
}

fn cmd_select(runs: &Path, mode: ModeArg, threshold: f64) -> Result<u8, Error> {
    let records = load_runs(runs)?;
    let mode = match mode {
        ModeArg::MinNorm => SelectionMode::MinNorm,
        ModeArg::BestValidation => SelectionMode::BestValidation,
    };
    let report = selection_report(&records, mode, threshold)?;
    println!(
        "selection ({:?}): {} of {} runs fitted",
        mode,
        report.kept_run_ids.len(),
        report.total_runs
    );
    println!(
        "chosen {}: test accuracy {:.4}, test loss {:.6}",
        report.chosen_run_id, report.chosen_test_accuracy, report.chosen_test_loss
    );
    match (report.pearson_p, report.spearman_r) {
        (Some(p), Some(r)) => println!("norm/test-loss correlation: pearson {p:.4}, spearman {r:.4}"),
        _ => println!("norm/test-loss correlation: undefined (fewer than 3 fitted runs or zero variance)"),
    }
    let out = runs.join(format!(
        "selection-{}.json",
        match mode {
            SelectionMode::MinNorm => "min_norm",
            SelectionMode::BestValidation => "best_validation",
        }
    ));
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&out, body).map_err(|e| Error::io(out.display().to_string(), e))?;
    println!("report written to {}", out.display());
    Ok(0)
}

fn cmd_report(runs: &Path, out: &Path, kind: KindArg, svg: bool) -> Result<u8, Error> {
    let records = load_runs(runs)?;
    let kind = match kind {
        KindArg::Heatmap => ReportKind::Heatmap,
        KindArg::Scatter => ReportKind::Scatter,
        KindArg::Trajectory => ReportKind::Trajectory,
    };
    let written = write_report(kind, &records, out, svg)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Result<u8, Error> {
    let ra = load_runs(a)?;
    let rb = load_runs(b)?;
    let csv = paired_csv(&ra, &rb)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    std::fs::write(out, &csv).map_err(|e| Error::io(out.display().to_string(), e))?;
    let fitted = |rs: &[RunRecord]| {
        rs.iter()
            .filter(|r| r.metrics.as_ref().is_some_and(|m| m.final_train_accuracy >= FIT_THRESHOLD))
            .count()
    };
    println!(
        "paired {} cells; fitted: {} (a, momentum {}) vs {} (b, momentum {})",
        csv.lines().count() - 1,
        fitted(&ra),
        ra.first().map(|r| r.config.momentum).unwrap_or(f64::NAN),
        fitted(&rb),
        rb.first().map(|r| r.config.momentum).unwrap_or(f64::NAN),
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_check() -> u8 {
    let items = run_self_check();
    let mut failures = Vec::new();
    for item in &items {
        match &item.result {
            Ok(()) => println!("pass  {}", item.name),
            Err(e) => {
                println!("FAIL  {}: {e}", item.name);
                failures.push(item.name);
            }
        }
    }
    if failures.is_empty() {
        println!("all {} checks passed", items.len());
        0
    } else {
        println!("{} of {} checks failed: {}", failures.len(), items.len(), failures.join(", "));
        5
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Train { config } => cmd_train(config),
        Cmd::Grid { config, workers } => cmd_grid(config, *workers),
        Cmd::Select { runs, mode, threshold } => cmd_select(runs, *mode, *threshold),
        Cmd::Report { runs, out, kind, svg } => cmd_report(runs, out, *kind, *svg),
        Cmd::Compare { a, b, out } => cmd_compare(a, b, out),
        Cmd::Check => Ok(cmd_check()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
