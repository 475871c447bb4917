//! The per-run training loop: seeded end-to-end training with the exact
//! update rule, per-epoch trajectory instrumentation, final evaluation, and
//! in-run invariance probes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, eval_batches, AugmentSpec, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::net::{build_network, softmax_cross_entropy, ArchSpec, Mode, Network, ParamSubset};
use crate::optim::{Schedule, ScheduleKind, SgdState};
use crate::rng::derive_seed;
use crate::tensor::{Real, Tensor};

/// Hyper-parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub alpha: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub schedule: ScheduleKind,
    pub augment: AugmentSpec,
    pub seed: u64,
    /// Epochs between invariance probes; 0 disables probing.
    #[serde(default)]
    pub probe_every: u64,
    #[serde(default = "default_norm_subset")]
    pub norm_subset: ParamSubset,
    /// Debug hook: replace every gradient with zero so the run follows the
    /// pure decay dynamics.
    #[serde(default)]
    pub suppress_grads: bool,
}

fn default_norm_subset() -> ParamSubset {
    ParamSubset::All
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.norm_subset == ParamSubset::HeadOnly {
            return Err(Error::Config("norm_subset must be all or scale_invariant_only".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.alpha, self.total_steps, self.schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Grid coordinates of a run, (weight-decay index, learning-rate index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellIndex {
    pub lambda_idx: usize,
    pub alpha_idx: usize,
}

/// Final metrics of a successfully completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub final_train_accuracy: f64,
    pub final_train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub norm_after_epoch1: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeChange {
    pub c: f64,
    pub rel_change: f64,
}

/// One invariance probe taken at an epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    pub base_loss: f64,
    pub grad_dot: f64,
    pub cosine: f64,
    pub changes: Vec<ProbeChange>,
}

/// Persisted outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub cell: Option<CellIndex>,
    pub config: TrainConfig,
    pub status: RunStatus,
    pub failed_at_step: Option<u64>,
    /// Present exactly when `status == Ok`.
    pub metrics: Option<RunMetrics>,
    pub norm_trajectory: Vec<f64>,
    pub test_acc_trajectory: Vec<f64>,
    pub steps_completed: u64,
    pub wall_seconds: f64,
    pub probes: Vec<ProbeRecord>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Equality ignoring wall-clock time, for determinism checks.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.run_id == other.run_id
            && self.cell == other.cell
            && self.config == other.config
            && self.status == other.status
            && self.failed_at_step == other.failed_at_step
            && self.metrics == other.metrics
            && self.norm_trajectory == other.norm_trajectory
            && self.test_acc_trajectory == other.test_acc_trajectory
            && self.steps_completed == other.steps_completed
            && self.probes == other.probes
    }
}

fn check_dataset(cfg: &TrainConfig, ds: &Dataset, role: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data(format!("{role} dataset is empty")));
    }
    if ds.image_shape != cfg.arch.input_shape {
        return Err(Error::Data(format!(
            "{role} image shape {:?} does not match arch input {:?}",
            ds.image_shape, cfg.arch.input_shape
        )));
    }
    if ds.num_classes != cfg.arch.num_classes {
        return Err(Error::Data(format!(
            "{role} has {} classes, arch expects {}",
            ds.num_classes, cfg.arch.num_classes
        )));
    }
    Ok(())
}

/// Eval-mode mean cross-entropy and top-1 accuracy over a dataset.
/// Argmax ties break to the lowest class index.
pub fn evaluate<F: Real>(
    net: &mut Network<F>,
    ds: &Dataset,
    normalizer: &Normalizer,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for batch in eval_batches::<F>(ds, 256, normalizer) {
        let logits = net.forward(&batch.images, Mode::Eval)?;
        let (mean_loss, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        if !mean_loss.is_finite() {
            return Err(Error::Numerical { context: "evaluation loss".into() });
        }
        loss_sum += mean_loss * batch.labels.len() as f64;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(k).zip(&batch.labels) {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Measure, for each scale factor, the relative train-mode loss change under
/// scaling of the scale-invariant groups (undone exactly afterwards), plus
/// the gradient-parameter alignment at the unscaled point.
pub fn invariance_probe<F: Real>(
    net: &mut Network<F>,
    batch: &Tensor<F>,
    labels: &[usize],
    c_list: &[f64],
    step: u64,
) -> Result<ProbeRecord> {
    if let Some(&bad) = c_list.iter().find(|&&c| !(c > 0.0)) {
        return Err(Error::Input(format!("probe scale factors must be positive, got {bad}")));
    }
    let base_loss = net.loss_and_grad_with(batch, labels, false)?;
    let dot = net.grad_param_dot(ParamSubset::ScaleInvariantOnly);
    let cosine = dot.cosine_checked()?;
    let mut changes = Vec::with_capacity(c_list.len());
    for &c in c_list {
        let snapshot = net.snapshot_values(ParamSubset::ScaleInvariantOnly);
        net.scale_group(c, ParamSubset::ScaleInvariantOnly)?;
        let scaled = net.train_loss_value(batch, labels)?;
        net.restore_values(&snapshot);
        changes.push(ProbeChange { c, rel_change: (scaled - base_loss).abs() / base_loss.abs() });
    }
    Ok(ProbeRecord { step, base_loss, grad_dot: dot.dot, cosine, changes })
}

/// Scale factors probed during training runs.
pub const PROBE_SCALES: [f64; 1] = [2.0];

/// Run exactly `total_steps` updates, recording the parameter norm and test
/// accuracy at every epoch boundary (and at completion when it falls
/// mid-epoch). Fully deterministic given the config.
///
/// Numerical failures produce an `Ok` record with `status = Failed` and the
/// failing step; precondition violations return an error.
pub fn train_run<F: Real>(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    val: Option<&Dataset>,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_dataset(cfg, train, "train")?;
    check_dataset(cfg, test, "test")?;
    if let Some(v) = val {
        check_dataset(cfg, v, "validation")?;
    }

    let started = Instant::now();
    let mut net = build_network::<F>(&cfg.arch, cfg.seed)?;
    let normalizer = Normalizer::fit(train);
    let schedule = cfg.schedule()?;
    let mut sgd = SgdState::new(cfg.momentum, cfg.weight_decay, &net.params)?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total_epochs = cfg.total_steps.div_ceil(steps_per_epoch);

    let mut norm_trajectory = Vec::new();
    let mut test_acc_trajectory = Vec::new();
    let mut probes = Vec::new();
    let mut last_test: Option<(f64, f64)> = None;
    let mut failed_at: Option<u64> = None;
    let mut prev_lr = f64::INFINITY;

    'training: for epoch in 0..total_epochs {
        let batches = epoch_batches::<F>(
            train,
            cfg.batch_size,
            derive_seed(cfg.seed, "epoch", epoch),
            &normalizer,
            Some(&cfg.augment),
        )?;
        for batch in &batches {
            let t = sgd.step_count();
            let lr = schedule.lr_at(t)?;
            debug_assert!(lr <= prev_lr, "schedule must be non-increasing");
            prev_lr = lr;

            if cfg.suppress_grads {
                net.zero_grads();
            } else {
                match net.loss_and_grad(&batch.images, &batch.labels) {
                    Ok(_) => {}
                    Err(Error::Numerical { .. }) => {
                        failed_at = Some(t);
                        break 'training;
                    }
                    Err(other) => return Err(other),
                }
            }
            match sgd.sgd_step(&mut net.params, lr) {
                Ok(()) => {}
                Err(Error::Numerical { .. }) => {
                    failed_at = Some(t);
                    break 'training;
                }
                Err(other) => return Err(other),
            }

            let done = sgd.step_count();
            if done % steps_per_epoch == 0 || done == cfg.total_steps {
                norm_trajectory.push(net.param_norm(cfg.norm_subset));
                let (test_loss, test_acc) = evaluate(&mut net, test, &normalizer)?;
                test_acc_trajectory.push(test_acc);
                last_test = Some((test_loss, test_acc));
                if cfg.probe_every > 0 {
                    let epoch_no = done.div_ceil(steps_per_epoch);
                    if epoch_no % cfg.probe_every == 0 {
                        probes.push(invariance_probe(
                            &mut net,
                            &batch.images,
                            &batch.labels,
                            &PROBE_SCALES,
                            done,
                        )?);
                    }
                }
            }
            if done == cfg.total_steps {
                break 'training;
            }
        }
    }

    let (status, metrics) = match failed_at {
        Some(_) => (RunStatus::Failed, None),
        None => {
            let (final_train_loss, final_train_accuracy) = evaluate(&mut net, train, &normalizer)?;
            let (test_loss, test_accuracy) = last_test.expect("at least one epoch boundary");
            let (val_loss, val_accuracy) = match val {
                Some(v) => {
                    let (l, a) = evaluate(&mut net, v, &normalizer)?;
                    (Some(l), Some(a))
                }
                None => (None, None),
            };
            (
                RunStatus::Ok,
                Some(RunMetrics {
                    final_train_accuracy,
                    final_train_loss,
                    test_loss,
                    test_accuracy,
                    norm_after_epoch1: norm_trajectory[0],
                    val_loss,
                    val_accuracy,
                }),
            )
        }
    };

    Ok(RunRecord {
        run_id: format!("seed-{}", cfg.seed),
        cell: None,
        config: cfg.clone(),
        status,
        failed_at_step: failed_at,
        metrics,
        norm_trajectory,
        test_acc_trajectory,
        steps_completed: failed_at.unwrap_or(cfg.total_steps),
        wall_seconds: started.elapsed().as_secs_f64(),
        probes,
    })
}
