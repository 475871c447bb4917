//! Fast invariant self-check suite backing the `check` CLI command.
//!
//! Every item re-derives its expected values from an independent oracle and
//! runs in a few seconds total.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{build_network, finite_diff_check, ArchFamily, ArchSpec, NetBuilder, ParamSubset};
use crate::optim::{predicted_decay_norm, Schedule, ScheduleKind, SgdState};
use crate::rng::{derive_rng, standard_normal};
use crate::search::{log_axis, make_grid, GridSpec, Spacing};
use crate::select::rank_correlations;
use crate::tensor::Tensor;
use crate::trainer::invariance_probe;

pub struct CheckItem {
    pub name: &'static str,
    pub result: Result<()>,
}

fn fail(msg: String) -> Result<()> {
    Err(Error::Numerical { context: msg })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        fail(msg())
    }
}

fn wrn_spec() -> ArchSpec {
    ArchSpec {
        family: ArchFamily::Microwrn,
        depth: 16,
        width: 1,
        num_classes: 10,
        input_shape: (3, 16, 16),
    }
}

fn standard_batch(shape: (usize, usize, usize), n: usize, classes: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = derive_rng(seed, "check-batch", 0);
    let len = n * shape.0 * shape.1 * shape.2;
    let data: Vec<f32> = (0..len).map(|_| standard_normal(&mut rng) as f32).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::from_vec(&[n, shape.0, shape.1, shape.2], data), labels)
}

fn check_gradients() -> Result<()> {
    let spec = ArchSpec {
        family: ArchFamily::MlpBn,
        depth: 2,
        width: 8,
        num_classes: 3,
        input_shape: (1, 4, 4),
    };
    let mut net = build_network::<f64>(&spec, 29)?;
    let mut rng = derive_rng(31, "check-fd", 0);
    let data: Vec<f64> = (0..4 * 16).map(|_| standard_normal(&mut rng)).collect();
    let batch = Tensor::from_vec(&[4, 1, 4, 4], data);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    let max_rel = finite_diff_check(&mut net, &batch, &labels, 1e-4, 0)?;
    ensure(max_rel < 1e-4, || format!("mlp-bn finite-difference error {max_rel:.3e} >= 1e-4"))?;

    // Conv + BN + residual composition.
    let mut b = NetBuilder::<f64>::new(&[2, 6, 6], 5);
    b.conv3x3("c1", 4, 1).batch_norm("b1").relu();
    let slot = b.save();
    b.conv3x3("c2", 4, 1).batch_norm("b2").relu().conv3x3("c3", 4, 1);
    b.res_add(slot, None);
    b.conv1x1("c4", 3, 2).global_avg_pool().linear("head", 3, true, false);
    let mut net = b.build();
    let data: Vec<f64> = (0..2 * 2 * 36).map(|_| standard_normal(&mut rng)).collect();
    let batch = Tensor::from_vec(&[2, 2, 6, 6], data);
    let max_rel = finite_diff_check(&mut net, &batch, &[0, 2], 1e-4, 0)?;
    ensure(max_rel < 1e-4, || format!("conv stack finite-difference error {max_rel:.3e} >= 1e-4"))
}

fn check_scale_invariance() -> Result<()> {
    for seed in 0..2u64 {
        let mut net = build_network::<f32>(&wrn_spec(), seed)?;
        let (batch, labels) = standard_batch((3, 16, 16), 8, 10, 40 + seed);
        let probe = invariance_probe(&mut net, &batch, &labels, &[0.5, 2.0, 10.0], 0)?;
        for change in &probe.changes {
            ensure(change.rel_change <= 1e-5, || {
                format!(
                    "seed {seed} c={} relative loss change {:.3e} > 1e-5",
                    change.c, change.rel_change
                )
            })?;
        }
    }
    Ok(())
}

fn check_orthogonality() -> Result<()> {
    for seed in 0..2u64 {
        let mut net = build_network::<f32>(&wrn_spec(), seed)?;
        let (batch, labels) = standard_batch((3, 16, 16), 8, 10, 60 + seed);
        net.loss_and_grad(&batch, &labels)?;
        let cosine = net.grad_param_dot(ParamSubset::ScaleInvariantOnly).cosine_checked()?;
        ensure(cosine <= 1e-5, || format!("seed {seed} normalized cosine {cosine:.3e} > 1e-5"))?;
    }
    Ok(())
}

fn check_decay_norm() -> Result<()> {
    let spec = ArchSpec {
        family: ArchFamily::MlpBn,
        depth: 1,
        width: 8,
        num_classes: 4,
        input_shape: (1, 16, 16),
    };
    for kind in [ScheduleKind::Constant, ScheduleKind::Cosine] {
        let mut net = build_network::<f64>(&spec, 3)?;
        let initial = net.param_norm(ParamSubset::All);
        let schedule = Schedule::new(0.1, 200, kind)?;
        let mut sgd = SgdState::new(0.0, 0.1, &net.params)?;
        net.zero_grads();
        for t in 0..200u64 {
            sgd.sgd_step(&mut net.params, schedule.lr_at(t)?)?;
        }
        let got = net.param_norm(ParamSubset::All);
        let expect = predicted_decay_norm(initial, &schedule, 0.1, 200)?;
        let rel = ((got - expect) / expect).abs();
        ensure(rel < 1e-10, || {
            format!("{kind:?}: decayed norm {got} vs predicted {expect} (rel {rel:.3e})")
        })?;
    }
    Ok(())
}

fn check_cosine_schedule() -> Result<()> {
    let s = Schedule::new(0.4, 1000, ScheduleKind::Cosine)?;
    ensure(s.lr_at(0)? == 0.4, || "lr_at(0) != alpha".into())?;
    ensure(s.lr_at(500)? == 0.2, || "lr_at(T/2) != alpha/2".into())?;
    ensure(s.lr_at(1000)? == 0.0, || "lr_at(T) != 0".into())
}

fn check_grid_values() -> Result<()> {
    let axis = log_axis(5e-5, 5e-1, 10)?;
    ensure(axis[0] == 5e-5 && axis[9] == 5e-1, || "axis endpoints not exact".into())?;
    for (i, &v) in axis.iter().enumerate() {
        let oracle = 5e-5 * 10f64.powf(4.0 * i as f64 / 9.0);
        ensure(((v - oracle) / oracle).abs() < 1e-12, || {
            format!("axis point {i}: {v} vs oracle {oracle}")
        })?;
    }
    let spec = GridSpec {
        lr_min: 5e-5,
        lr_max: 5e-1,
        wd_min: 5e-5,
        wd_max: 5e-1,
        n_lr: 10,
        n_wd: 10,
        spacing: Spacing::Log,
    };
    let cells = make_grid(&spec)?;
    for li in 0..10usize {
        for ai in 0..10usize {
            let lj = ai;
            let aj = li;
            let a = cells[li * 10 + ai];
            let b = cells[lj * 10 + aj];
            let (pa, pb) = (a.0 * a.1, b.0 * b.1);
            ensure(((pa - pb) / pa).abs() < 1e-9, || {
                format!("anti-diagonal product mismatch at ({li},{ai}): {pa} vs {pb}")
            })?;
        }
    }
    Ok(())
}

fn check_correlations() -> Result<()> {
    let xs = [1.0, 2.0, 3.0, 4.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
    let (p, r) = rank_correlations(&xs, &ys)?;
    ensure((p - 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12, || {
        format!("perfect linear pair gave p={p}, r={r}")
    })?;
    let dec: Vec<f64> = xs.iter().map(|x| 10.0 - x * x).collect();
    let (_, r) = rank_correlations(&xs, &dec)?;
    ensure((r + 1.0).abs() < 1e-12, || format!("inverse monotone pair gave r={r}"))?;
    let (_, r) = rank_correlations(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0])?;
    let expect = 4.5 / 22.5f64.sqrt();
    ensure((r - expect).abs() < 1e-12, || format!("tied-rank case gave r={r}, expected {expect}"))
}

/// Run every self-check item; items are independent and all are executed.
pub fn run_self_check() -> Vec<CheckItem> {
    vec![
        CheckItem { name: "gradient-check", result: check_gradients() },
        CheckItem { name: "scale-invariance(c=0.5,2,10)", result: check_scale_invariance() },
        CheckItem { name: "gradient-orthogonality", result: check_orthogonality() },
        CheckItem { name: "decay-norm-identity", result: check_decay_norm() },
        CheckItem { name: "cosine-schedule-anchors", result: check_cosine_schedule() },
        CheckItem { name: "grid-log-spacing", result: check_grid_values() },
        CheckItem { name: "correlation-oracles", result: check_correlations() },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_build_passes_every_item() {
        for item in run_self_check() {
            assert!(item.result.is_ok(), "{}: {:?}", item.name, item.result);
        }
    }
}
