//! Validation-free model selection: filter runs that fit the training set,
//! pick the minimum-norm run, and report norm/test-loss correlations. A
//! validation-accuracy baseline selector is provided for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RunRecord;

pub const FIT_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    MinNorm,
    BestValidation,
}

/// Outcome of a selection pass over a run set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selection_mode: SelectionMode,
    pub total_runs: usize,
    pub kept_run_ids: Vec<String>,
    pub chosen_run_id: String,
    pub chosen_test_accuracy: f64,
    pub chosen_test_loss: f64,
    /// Pearson coefficient between norm-after-epoch-1 and test loss over the
    /// kept runs; absent when undefined (fewer than 3 runs or zero variance).
    pub pearson_p: Option<f64>,
    pub spearman_r: Option<f64>,
}

/// Keep completed runs whose final training accuracy reaches the threshold.
pub fn filter_fitted(records: &[RunRecord], threshold: f64) -> Result<Vec<&RunRecord>> {
    let kept: Vec<&RunRecord> = records
        .iter()
        .filter(|r| {
            r.is_ok()
                && r.metrics
                    .as_ref()
                    .is_some_and(|m| m.final_train_accuracy >= threshold)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::NoFittedModel { threshold });
    }
    Ok(kept)
}

fn cell_key(r: &RunRecord) -> (usize, usize, &str) {
    match r.cell {
        Some(c) => (c.lambda_idx, c.alpha_idx, r.run_id.as_str()),
        None => (usize::MAX, usize::MAX, r.run_id.as_str()),
    }
}

/// The record with minimal norm after one epoch; ties break to the smaller
/// (weight-decay index, learning-rate index), then run id.
pub fn select_min_norm<'a>(kept: &[&'a RunRecord]) -> &'a RunRecord {
    assert!(!kept.is_empty(), "select_min_norm requires at least one record");
    kept.iter()
        .copied()
        .min_by(|a, b| {
            let na = a.metrics.as_ref().expect("fitted record").norm_after_epoch1;
            let nb = b.metrics.as_ref().expect("fitted record").norm_after_epoch1;
            na.partial_cmp(&nb)
                .expect("finite norms")
                .then_with(|| cell_key(a).cmp(&cell_key(b)))
        })
        .expect("non-empty")
}

/// The record with highest validation accuracy; ties break to the lower
/// validation loss, then input order.
pub fn best_on_validation<'a>(records: &[&'a RunRecord]) -> Result<&'a RunRecord> {
    if records.is_empty() {
        return Err(Error::Input("best_on_validation requires at least one record".into()));
    }
    let mut best: Option<(&RunRecord, f64, f64)> = None;
    for r in records {
        let m = r.metrics.as_ref().ok_or_else(|| {
            Error::Config(format!("run {} has no final metrics", r.run_id))
        })?;
        let (acc, loss) = match (m.val_accuracy, m.val_loss) {
            (Some(a), Some(l)) => (a, l),
            _ => {
                return Err(Error::Config(format!(
                    "run {} carries no validation metrics; rerun with a validation split",
                    r.run_id
                )))
            }
        };
        let better = match best {
            None => true,
            Some((_, bacc, bloss)) => acc > bacc || (acc == bacc && loss < bloss),
        };
        if better {
            best = Some((r, acc, loss));
        }
    }
    Ok(best.expect("non-empty").0)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 {
        return Err(Error::UndefinedCorrelation { side: "xs" });
    }
    if vy == 0.0 {
        return Err(Error::UndefinedCorrelation { side: "ys" });
    }
    Ok((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson (population moments) and Spearman (Pearson of average-tied
/// ranks) coefficients. Requires at least 3 finite pairs.
pub fn rank_correlations(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "correlation inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Input(format!(
            "correlations need at least 3 pairs, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("correlation inputs must be finite".into()));
    }
    let p = pearson(xs, ys)?;
    let r = pearson(&average_ranks(xs), &average_ranks(ys))?;
    Ok((p, r))
}

/// Full selection pass: filter fitted runs, choose per the mode, and attach
/// norm/test-loss correlations when they are defined.
pub fn selection_report(
    records: &[RunRecord],
    mode: SelectionMode,
    threshold: f64,
) -> Result<SelectionReport> {
    let kept = filter_fitted(records, threshold)?;
    let chosen = match mode {
        SelectionMode::MinNorm => select_min_norm(&kept),
        SelectionMode::BestValidation => best_on_validation(&kept)?,
    };
    let norms: Vec<f64> = kept
        .iter()
        .map(|r| r.metrics.as_ref().expect("fitted").norm_after_epoch1)
        .collect();
    let losses: Vec<f64> =
        kept.iter().map(|r| r.metrics.as_ref().expect("fitted").test_loss).collect();
    let (pearson_p, spearman_r) = match rank_correlations(&norms, &losses) {
        Ok((p, r)) => (Some(p), Some(r)),
        Err(Error::Input(_)) | Err(Error::UndefinedCorrelation { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    let chosen_metrics = chosen.metrics.as_ref().expect("fitted");
    Ok(SelectionReport {
        selection_mode: mode,
        total_runs: records.len(),
        kept_run_ids: kept.iter().map(|r| r.run_id.clone()).collect(),
        chosen_run_id: chosen.run_id.clone(),
        chosen_test_accuracy: chosen_metrics.test_accuracy,
        chosen_test_loss: chosen_metrics.test_loss,
        pearson_p,
        spearman_r,
    })
}
