//! Figure-data emitters: CSV is authoritative, SVG is an optional rendering.
//!
//! CSV outputs are locale-independent: '.' decimals, ',' delimiters, LF line
//! endings, header row always present. Missing values (failed runs) are
//! written as `nan`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::select::FIT_THRESHOLD;
use crate::trainer::RunRecord;

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".into()
    }
}

fn fitted(r: &RunRecord) -> bool {
    r.is_ok()
        && r.metrics
            .as_ref()
            .is_some_and(|m| m.final_train_accuracy >= FIT_THRESHOLD)
}

fn sorted_refs(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut refs: Vec<&RunRecord> = records.iter().collect();
    refs.sort_by(|a, b| match (a.cell, b.cell) {
        (Some(ca), Some(cb)) => (ca.lambda_idx, ca.alpha_idx).cmp(&(cb.lambda_idx, cb.alpha_idx)),
        _ => (a.config.weight_decay, a.config.alpha)
            .partial_cmp(&(b.config.weight_decay, b.config.alpha))
            .expect("finite hyper-parameters"),
    });
    refs
}

/// One row per run: (alpha, weight_decay, test_accuracy, train_accuracy, fitted).
pub fn heatmap_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("alpha,weight_decay,test_accuracy,train_accuracy,fitted\n");
    for r in sorted_refs(records) {
        let (test_acc, train_acc) = match &r.metrics {
            Some(m) => (m.test_accuracy, m.final_train_accuracy),
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt(r.config.alpha),
            fmt(r.config.weight_decay),
            fmt(test_acc),
            fmt(train_acc),
            u8::from(fitted(r))
        );
    }
    out
}

/// One row per run: (norm_after_epoch1, test_loss, alpha_times_lambda, fitted).
pub fn scatter_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("norm_after_epoch1,test_loss,alpha_times_lambda,fitted\n");
    for r in sorted_refs(records) {
        let (norm, loss) = match &r.metrics {
            Some(m) => (m.norm_after_epoch1, m.test_loss),
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt(norm),
            fmt(loss),
            fmt(r.config.alpha * r.config.weight_decay),
            u8::from(fitted(r))
        );
    }
    out
}

/// Per-epoch rows for one run: (epoch, norm, test_accuracy).
pub fn trajectory_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,norm,test_accuracy\n");
    for (i, (norm, acc)) in
        record.norm_trajectory.iter().zip(&record.test_acc_trajectory).enumerate()
    {
        let _ = writeln!(out, "{},{},{}", i + 1, fmt(*norm), fmt(*acc));
    }
    out
}

/// Paired comparison of two run sets covering the same grid, matched by
/// cell. Columns suffixed `_a` / `_b` follow the argument order.
pub fn paired_csv(a: &[RunRecord], b: &[RunRecord]) -> Result<String> {
    let index = |rs: &[RunRecord]| {
        rs.iter()
            .filter_map(|r| r.cell.map(|c| ((c.lambda_idx, c.alpha_idx), r.clone())))
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    let (ia, ib) = (index(a), index(b));
    if ia.is_empty() || ib.is_empty() {
        return Err(Error::Input("paired comparison requires grid records on both sides".into()));
    }
    let mut out = String::from(
        "alpha,weight_decay,test_loss_a,test_accuracy_a,fitted_a,test_loss_b,test_accuracy_b,fitted_b\n",
    );
    for (key, ra) in &ia {
        let Some(rb) = ib.get(key) else { continue };
        let (la, ta) = ra.metrics.as_ref().map_or((f64::NAN, f64::NAN), |m| (m.test_loss, m.test_accuracy));
        let (lb, tb) = rb.metrics.as_ref().map_or((f64::NAN, f64::NAN), |m| (m.test_loss, m.test_accuracy));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt(ra.config.alpha),
            fmt(ra.config.weight_decay),
            fmt(la),
            fmt(ta),
            u8::from(fitted(ra)),
            fmt(lb),
            fmt(tb),
            u8::from(fitted(rb))
        );
    }
    Ok(out)
}

// ---- minimal SVG rendering ----

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 60.0;

struct SvgDoc {
    body: String,
}

impl SvgDoc {
    fn new() -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
        );
        let _ = writeln!(body, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
        SvgDoc { body }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{color}"/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, color: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}"/>"#);
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="1"/>"#
        );
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="monospace" fill="black">{content}</text>"#
        );
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        self.line(MARGIN, SVG_H - MARGIN, SVG_W - MARGIN, SVG_H - MARGIN, "black");
        self.line(MARGIN, MARGIN, MARGIN, SVG_H - MARGIN, "black");
        self.text(SVG_W / 2.0 - 40.0, SVG_H - 16.0, 12.0, x_label);
        self.text(8.0, MARGIN - 18.0, 12.0, y_label);
    }

    fn finish(mut self) -> String {
        let _ = writeln!(self.body, "</svg>");
        self.body
    }
}

fn color_map(t: f64) -> String {
    // Blue (low) to red (high).
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    let g = (96.0 + 64.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    format!("rgb({r},{g},{b})")
}

/// Test-accuracy heatmap over the (alpha, weight-decay) plane.
pub fn heatmap_svg(records: &[RunRecord]) -> String {
    let refs = sorted_refs(records);
    let mut alphas: Vec<f64> = refs.iter().map(|r| r.config.alpha).collect();
    let mut wds: Vec<f64> = refs.iter().map(|r| r.config.weight_decay).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    wds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    wds.dedup();
    let accs: Vec<f64> = refs
        .iter()
        .filter_map(|r| r.metrics.as_ref().map(|m| m.test_accuracy))
        .collect();
    let (lo, hi) = accs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);

    let mut doc = SvgDoc::new();
    doc.axes("alpha (log bins)", "weight decay (log bins)");
    let cell_w = (SVG_W - 2.0 * MARGIN) / alphas.len() as f64;
    let cell_h = (SVG_H - 2.0 * MARGIN) / wds.len() as f64;
    for r in &refs {
        let ai = alphas.iter().position(|&v| v == r.config.alpha).unwrap();
        let wi = wds.iter().position(|&v| v == r.config.weight_decay).unwrap();
        let x = MARGIN + ai as f64 * cell_w;
        let y = SVG_H - MARGIN - (wi + 1) as f64 * cell_h;
        let color = match &r.metrics {
            Some(m) => color_map((m.test_accuracy - lo) / span),
            None => "rgb(40,40,40)".into(),
        };
        doc.rect(x, y, cell_w - 1.0, cell_h - 1.0, &color);
    }
    doc.text(
        MARGIN,
        MARGIN - 4.0,
        12.0,
        &format!("test accuracy {:.3} (blue) to {:.3} (red); dark = failed", lo, hi),
    );
    doc.finish()
}

fn log_pos(v: f64, lo: f64, hi: f64) -> f64 {
    ((v.max(1e-300).ln() - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Scatter of norm-after-epoch-1 against test loss, colored by alpha*lambda.
pub fn scatter_svg(records: &[RunRecord]) -> String {
    let pts: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| fitted(r))
        .filter_map(|r| {
            r.metrics
                .as_ref()
                .map(|m| (m.norm_after_epoch1, m.test_loss, r.config.alpha * r.config.weight_decay))
        })
        .collect();
    let mut doc = SvgDoc::new();
    doc.axes("norm after epoch 1 (log)", "test loss");
    if pts.is_empty() {
        doc.text(SVG_W / 2.0 - 60.0, SVG_H / 2.0, 12.0, "no fitted runs");
        return doc.finish();
    }
    let (xlo, xhi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0.ln()), hi.max(p.0.ln()))
    });
    let (ylo, yhi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (plo, phi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.2.ln()), hi.max(p.2.ln()))
    });
    let xspan = (xhi - xlo).max(1e-12);
    let yspan = (yhi - ylo).max(1e-12);
    for (norm, loss, prod) in &pts {
        let x = MARGIN + log_pos(*norm, xlo, xlo + xspan) * (SVG_W - 2.0 * MARGIN);
        let y = SVG_H - MARGIN - ((loss - ylo) / yspan).clamp(0.0, 1.0) * (SVG_H - 2.0 * MARGIN);
        let t = if phi > plo { (prod.ln() - plo) / (phi - plo) } else { 0.5 };
        doc.circle(x, y, 4.0, &color_map(t));
    }
    doc.text(MARGIN, MARGIN - 4.0, 12.0, "color: alpha*lambda (blue low, red high)");
    doc.finish()
}

/// Overlaid per-run norm trajectories (log-scaled norm).
pub fn trajectory_svg(records: &[RunRecord]) -> String {
    let mut doc = SvgDoc::new();
    doc.axes("epoch", "parameter norm (log)");
    let runs: Vec<&RunRecord> =
        records.iter().filter(|r| !r.norm_trajectory.is_empty()).collect();
    if runs.is_empty() {
        return doc.finish();
    }
    let max_epochs = runs.iter().map(|r| r.norm_trajectory.len()).max().unwrap();
    let (lo, hi) = runs
        .iter()
        .flat_map(|r| &r.norm_trajectory)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v.max(1e-12).ln()), hi.max(v.max(1e-12).ln()))
        });
    let span = (hi - lo).max(1e-12);
    let (plo, phi) = runs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        let p = (r.config.alpha * r.config.weight_decay).max(1e-300).ln();
        (lo.min(p), hi.max(p))
    });
    for r in &runs {
        let pts: Vec<(f64, f64)> = r
            .norm_trajectory
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = MARGIN
                    + (i as f64 / (max_epochs.max(2) - 1) as f64) * (SVG_W - 2.0 * MARGIN);
                let y = SVG_H
                    - MARGIN
                    - ((v.max(1e-12).ln() - lo) / span) * (SVG_H - 2.0 * MARGIN);
                (x, y)
            })
            .collect();
        let p = (r.config.alpha * r.config.weight_decay).max(1e-300).ln();
        let t = if phi > plo { (p - plo) / (phi - plo) } else { 0.5 };
        doc.polyline(&pts, &color_map(t));
    }
    doc.text(MARGIN, MARGIN - 4.0, 12.0, "color: alpha*lambda (blue low, red high)");
    doc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Heatmap,
    Scatter,
    Trajectory,
}

/// Write the CSV (and optional SVG) artifacts for one report kind.
/// Returns the paths written.
pub fn write_report(
    kind: ReportKind,
    records: &[RunRecord],
    out_dir: &Path,
    svg: bool,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Input("no run records to report on".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, content: String| -> Result<()> {
        std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
        Ok(())
    };
    match kind {
        ReportKind::Heatmap => {
            emit(out_dir.join("heatmap.csv"), heatmap_csv(records))?;
            if svg {
                emit(out_dir.join("heatmap.svg"), heatmap_svg(records))?;
            }
        }
        ReportKind::Scatter => {
            emit(out_dir.join("scatter.csv"), scatter_csv(records))?;
            if svg {
                emit(out_dir.join("scatter.svg"), scatter_svg(records))?;
            }
        }
        ReportKind::Trajectory => {
            let dir = out_dir.join("trajectories");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            for r in sorted_refs(records) {
                emit(dir.join(format!("{}.csv", r.run_id)), trajectory_csv(r))?;
            }
            if svg {
                emit(out_dir.join("trajectory.svg"), trajectory_svg(records))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AugmentSpec;
    use crate::net::{ArchFamily, ArchSpec, ParamSubset};
    use crate::optim::ScheduleKind;
    use crate::trainer::{CellIndex, RunMetrics, RunStatus, TrainConfig};

    fn record(alpha: f64, wd: f64, cell: (usize, usize), fitted: bool) -> RunRecord {
        RunRecord {
            run_id: format!("cell-l{}-a{}", cell.0, cell.1),
            cell: Some(CellIndex { lambda_idx: cell.0, alpha_idx: cell.1 }),
            config: TrainConfig {
                arch: ArchSpec {
                    family: ArchFamily::MlpBn,
                    depth: 1,
                    width: 4,
                    num_classes: 2,
                    input_shape: (1, 2, 2),
                },
                alpha,
                weight_decay: wd,
                momentum: 0.0,
                batch_size: 10,
                total_steps: 20,
                schedule: ScheduleKind::Cosine,
                augment: AugmentSpec::disabled(),
                seed: 0,
                probe_every: 0,
                norm_subset: ParamSubset::All,
                suppress_grads: false,
            },
            status: RunStatus::Ok,
            failed_at_step: None,
            metrics: Some(RunMetrics {
                final_train_accuracy: if fitted { 1.0 } else { 0.9 },
                final_train_loss: 0.1,
                test_loss: 1.0 + alpha,
                test_accuracy: 0.5,
                norm_after_epoch1: 10.0 * wd,
                val_loss: None,
                val_accuracy: None,
            }),
            norm_trajectory: vec![10.0 * wd, 9.0 * wd],
            test_acc_trajectory: vec![0.4, 0.5],
            steps_completed: 20,
            wall_seconds: 0.0,
            probes: vec![],
        }
    }

    fn grid_records() -> Vec<RunRecord> {
        let mut out = Vec::new();
        for li in 0..2 {
            for ai in 0..3 {
                out.push(record(0.1 * (ai + 1) as f64, 0.01 * (li + 1) as f64, (li, ai), ai != 2));
            }
        }
        out
    }

    #[test]
    fn heatmap_has_one_row_per_cell() {
        let records = grid_records();
        let csv = heatmap_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,weight_decay,test_accuracy,train_accuracy,fitted");
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].starts_with("0.1,0.01,"));
        assert!(lines[1].ends_with(",1"));
        assert!(lines[3].ends_with(",0")); // unfitted cell
    }

    #[test]
    fn scatter_columns_and_product() {
        let records = grid_records();
        let csv = scatter_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "norm_after_epoch1,test_loss,alpha_times_lambda,fitted");
        assert_eq!(lines.len(), 1 + 6);
        let fields: Vec<&str> = lines[1].split(',').collect();
        let product: f64 = fields[2].parse().unwrap();
        assert_eq!(product, 0.1 * 0.01);
    }

    #[test]
    fn trajectory_rows_match_epochs() {
        let r = record(0.1, 0.01, (0, 0), true);
        let csv = trajectory_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,norm,test_accuracy");
        assert_eq!(lines.len(), 1 + 2);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn failed_runs_emit_nan_rows() {
        let mut r = record(0.1, 0.01, (0, 0), true);
        r.status = RunStatus::Failed;
        r.metrics = None;
        let csv = heatmap_csv(&[r]);
        assert!(csv.lines().nth(1).unwrap().contains("nan"));
    }

    #[test]
    fn paired_table_joins_on_cells() {
        let a = grid_records();
        let mut b = grid_records();
        for r in &mut b {
            r.config.momentum = 0.9;
            if let Some(m) = r.metrics.as_mut() {
                m.test_loss += 0.5;
            }
        }
        let csv = paired_csv(&a, &b).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[0].starts_with("alpha,weight_decay,test_loss_a"));
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let records = grid_records();
        for svg in [heatmap_svg(&records), scatter_svg(&records), trajectory_svg(&records)] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
        }
    }

    #[test]
    fn write_report_emits_expected_files() {
        let records = grid_records();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_report(ReportKind::Heatmap, &records, dir.path(), true).unwrap();
        assert_eq!(paths.len(), 2);
        let paths = write_report(ReportKind::Trajectory, &records, dir.path(), false).unwrap();
        assert_eq!(paths.len(), 6); // one CSV per run
        assert!(dir.path().join("trajectories/cell-l0-a0.csv").exists());
    }
}
