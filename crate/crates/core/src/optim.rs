//! SGD with momentum and weight decay, cosine annealing, and the analytic
//! norm-decay oracle.
//!
//! The update is, per step t:
//!
//! ```text
//! v_{t+1} = mu * v_t + lr_t * (grad + wd * theta_t)
//! theta_{t+1} = theta_t - v_{t+1}
//! ```
//!
//! with the decay term gated per parameter group by `decay_enabled`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamGroup;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

/// Learning-rate schedule over a fixed number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl Schedule {
    pub fn new(alpha: f64, total_steps: u64, kind: ScheduleKind) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {alpha}")));
        }
        if total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        Ok(Schedule { alpha, total_steps, kind })
    }

    /// Learning rate at step `t` in `[0, total_steps]`.
    ///
    /// Cosine: `0.5 * alpha * (1 + cos(pi * t / T))`, no restarts, annealing
    /// to exactly 0 at `t = T`; the endpoints and midpoint are anchored so
    /// they are exact rather than `cos`-rounded.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::Range(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.alpha,
            ScheduleKind::Cosine => {
                if t == 0 {
                    self.alpha
                } else if t == self.total_steps {
                    0.0
                } else if 2 * t == self.total_steps {
                    0.5 * self.alpha
                } else {
                    let ratio = t as f64 / self.total_steps as f64;
                    (0.5 * self.alpha * (1.0 + (std::f64::consts::PI * ratio).cos())).max(0.0)
                }
            }
        })
    }
}

/// The per-step multiplicative shrink applied to the parameter vector.
pub fn effective_weight_decay(lr: f64, weight_decay: f64) -> f64 {
    lr * weight_decay
}

/// Norm after `steps` gradient-free decay steps:
/// `initial_norm * prod_{t=0}^{steps-1} (1 - lr_t * wd)`.
pub fn predicted_decay_norm(
    initial_norm: f64,
    schedule: &Schedule,
    weight_decay: f64,
    steps: u64,
) -> Result<f64> {
    let mut norm = initial_norm;
    for t in 0..steps {
        let factor = 1.0 - schedule.lr_at(t)? * weight_decay;
        if factor <= 0.0 {
            return Err(Error::DecayDivergence { factor, step: t });
        }
        norm *= factor;
    }
    Ok(norm)
}

/// Optimizer state: momentum/decay coefficients and per-group velocity.
#[derive(Debug, Clone)]
pub struct SgdState<F: Real> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<F>>,
    step_count: u64,
}

impl<F: Real> SgdState<F> {
    pub fn new(momentum: f64, weight_decay: f64, params: &[ParamGroup<F>]) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(SgdState {
            momentum,
            weight_decay,
            velocity: params.iter().map(|g| vec![F::zero(); g.len()]).collect(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn velocity(&self, group: usize) -> &[F] {
        &self.velocity[group]
    }

    /// One update over all groups with the given learning rate.
    pub fn sgd_step(&mut self, params: &mut [ParamGroup<F>], lr: f64) -> Result<()> {
        assert_eq!(params.len(), self.velocity.len(), "optimizer bound to a different network");
        let mu = F::of(self.momentum);
        let lr_f = F::of(lr);
        for (group, vel) in params.iter_mut().zip(&mut self.velocity) {
            debug_assert_eq!(group.len(), vel.len());
            let wd = if group.decay_enabled { F::of(self.weight_decay) } else { F::zero() };
            for ((p, g), v) in group.values.iter_mut().zip(&group.grads).zip(vel.iter_mut()) {
                *v = mu * *v + lr_f * (*g + wd * *p);
                *p = *p - *v;
                if !p.is_finite() {
                    return Err(Error::Numerical { context: format!("sgd_step[{}]", group.id) });
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_group(theta: f64, grad: f64, decay_enabled: bool) -> ParamGroup<f64> {
        let mut g = ParamGroup::new("w", vec![theta], false);
        g.grads = vec![grad];
        g.decay_enabled = decay_enabled;
        g
    }

    #[test]
    fn cosine_anchors_are_exact() {
        let s = Schedule::new(0.3, 100, ScheduleKind::Cosine).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.3);
        assert_eq!(s.lr_at(50).unwrap(), 0.15);
        assert_eq!(s.lr_at(100).unwrap(), 0.0);
        assert!(s.lr_at(101).is_err());
    }

    #[test]
    fn cosine_is_nonincreasing() {
        let s = Schedule::new(0.5, 333, ScheduleKind::Cosine).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..=333 {
            let lr = s.lr_at(t).unwrap();
            assert!(lr <= prev, "lr increased at t={t}");
            assert!(lr >= 0.0);
            prev = lr;
        }
    }

    #[test]
    fn constant_schedule_is_flat() {
        let s = Schedule::new(0.05, 10, ScheduleKind::Constant).unwrap();
        for t in 0..=10 {
            assert_eq!(s.lr_at(t).unwrap(), 0.05);
        }
    }

    #[test]
    fn plain_sgd_step_example() {
        // theta=1, g=2, mu=0, wd=0, lr=0.1 -> v=0.2, theta'=0.8
        let mut params = vec![scalar_group(1.0, 2.0, true)];
        let mut sgd = SgdState::new(0.0, 0.0, &params).unwrap();
        sgd.sgd_step(&mut params, 0.1).unwrap();
        assert!((sgd.velocity(0)[0] - 0.2).abs() < 1e-15);
        assert!((params[0].values[0] - 0.8).abs() < 1e-15);
        assert_eq!(sgd.step_count(), 1);
    }

    #[test]
    fn decay_only_step_example() {
        // theta=1, g=0, mu=0, wd=0.5, lr=0.1 -> theta' = 0.95
        let mut params = vec![scalar_group(1.0, 0.0, true)];
        let mut sgd = SgdState::new(0.0, 0.5, &params).unwrap();
        sgd.sgd_step(&mut params, 0.1).unwrap();
        assert!((params[0].values[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn two_step_momentum_example() {
        // theta=1, g=1 at both steps, mu=0.9, wd=0, lr=0.1:
        // v1=0.1, theta1=0.9; v2=0.19, theta2=0.71.
        let mut params = vec![scalar_group(1.0, 1.0, true)];
        let mut sgd = SgdState::new(0.9, 0.0, &params).unwrap();
        sgd.sgd_step(&mut params, 0.1).unwrap();
        params[0].grads[0] = 1.0;
        sgd.sgd_step(&mut params, 0.1).unwrap();
        assert!((sgd.velocity(0)[0] - 0.19).abs() < 1e-12);
        assert!((params[0].values[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn first_momentum_step_equals_momentum_free_step() {
        let mut a = vec![scalar_group(2.0, 0.7, true)];
        let mut b = vec![scalar_group(2.0, 0.7, true)];
        SgdState::new(0.9, 0.01, &a).unwrap().sgd_step(&mut a, 0.1).unwrap();
        SgdState::new(0.0, 0.01, &b).unwrap().sgd_step(&mut b, 0.1).unwrap();
        assert_eq!(a[0].values[0], b[0].values[0]);
    }

    #[test]
    fn decay_gating_treats_disabled_groups_as_wd_zero() {
        let mut gated = vec![scalar_group(1.0, 0.0, false)];
        let mut sgd = SgdState::new(0.0, 0.5, &gated).unwrap();
        sgd.sgd_step(&mut gated, 0.1).unwrap();
        assert_eq!(gated[0].values[0], 1.0);
    }

    #[test]
    fn nonfinite_update_is_reported() {
        let mut params = vec![scalar_group(1.0, f64::MAX, true)];
        let mut sgd = SgdState::new(0.0, 0.0, &params).unwrap();
        assert!(matches!(
            sgd.sgd_step(&mut params, f64::MAX),
            Err(Error::Numerical { .. })
        ));
    }

    #[test]
    fn effective_weight_decay_examples() {
        assert_eq!(effective_weight_decay(0.1, 0.1), 0.010000000000000002);
        assert!((effective_weight_decay(0.1, 0.1) - 0.01).abs() < 1e-15);
        assert_eq!(effective_weight_decay(0.3, 0.0), 0.0);
    }

    #[test]
    fn predicted_decay_norm_examples() {
        let s = Schedule::new(0.1, 100, ScheduleKind::Constant).unwrap();
        let got = predicted_decay_norm(1.0, &s, 0.1, 2).unwrap();
        assert!((got - 0.9801).abs() < 1e-12, "{got}");
        assert_eq!(predicted_decay_norm(3.5, &s, 0.0, 50).unwrap(), 3.5);

        // Cosine oracle: evaluate the ten factors directly.
        let s = Schedule::new(0.1, 10, ScheduleKind::Cosine).unwrap();
        let mut expect = 1.0f64;
        for t in 0..10u64 {
            expect *= 1.0 - s.lr_at(t).unwrap() * 0.1;
        }
        let got = predicted_decay_norm(1.0, &s, 0.1, 10).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn predicted_decay_norm_rejects_overshoot() {
        let s = Schedule::new(2.0, 10, ScheduleKind::Constant).unwrap();
        assert!(matches!(
            predicted_decay_norm(1.0, &s, 1.0, 2),
            Err(Error::DecayDivergence { .. })
        ));
    }

    proptest! {
        // One-step identity at mu=0: stepping equals the update formula
        // evaluated in the same order, and agrees with the decoupled
        // algebraic form theta*(1 - lr*wd) - lr*g to rounding.
        #[test]
        fn one_step_identity_mu_zero(
            theta in -10.0f64..10.0,
            grad in -10.0f64..10.0,
            lr in 1e-6f64..0.5,
            wd in 0.0f64..0.5,
        ) {
            let mut params = vec![scalar_group(theta, grad, true)];
            let mut sgd = SgdState::new(0.0, wd, &params).unwrap();
            sgd.sgd_step(&mut params, lr).unwrap();
            let stepped = params[0].values[0];
            let formula_order = theta - lr * (grad + wd * theta);
            prop_assert_eq!(stepped, formula_order);
            let decoupled = theta * (1.0 - lr * wd) - lr * grad;
            let denom = stepped.abs().max(1.0);
            prop_assert!((stepped - decoupled).abs() / denom < 1e-12);
        }

        #[test]
        fn velocity_starts_at_zero(theta in -5.0f64..5.0, grad in -5.0f64..5.0) {
            let params = vec![scalar_group(theta, grad, true)];
            let sgd = SgdState::new(0.9, 0.1, &params).unwrap();
            prop_assert!(sgd.velocity(0).iter().all(|&v| v == 0.0));
        }
    }
}
