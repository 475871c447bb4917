//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::rng::derive_rng;
use crate::tensor::Tensor;

use super::{Network, FD_EXHAUSTIVE_LIMIT, FD_SAMPLED_COORDS};
use rand::Rng;

/// Compare every analytic gradient coordinate (or a seeded sample of at
/// least [`FD_SAMPLED_COORDS`] for nets above [`FD_EXHAUSTIVE_LIMIT`]
/// parameters) against a central difference with the given step.
///
/// Runs in double precision only; the relative error denominator is
/// `max(|analytic|, |numeric|, 1e-8)`. Returns the maximum relative error.
pub fn finite_diff_check(
    net: &mut Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    step: f64,
    seed: u64,
) -> Result<f64> {
    net.loss_and_grad_with(batch, labels, false)?;
    let analytic: Vec<Vec<f64>> = net.params.iter().map(|g| g.grads.clone()).collect();

    let total: usize = net.params.iter().map(|g| g.len()).sum();
    let coords: Vec<(usize, usize)> = if total <= FD_EXHAUSTIVE_LIMIT {
        net.params
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| (0..g.len()).map(move |ei| (gi, ei)))
            .collect()
    } else {
        let mut rng = derive_rng(seed, "fd-coords", 0);
        let mut picked = Vec::with_capacity(FD_SAMPLED_COORDS);
        let mut seen = std::collections::HashSet::new();
        while picked.len() < FD_SAMPLED_COORDS {
            let flat = rng.gen_range(0..total);
            if !seen.insert(flat) {
                continue;
            }
            let mut rest = flat;
            for (gi, g) in net.params.iter().enumerate() {
                if rest < g.len() {
                    picked.push((gi, rest));
                    break;
                }
                rest -= g.len();
            }
        }
        picked
    };

    let mut max_rel = 0.0f64;
    for (gi, ei) in coords {
        let orig = net.params[gi].values[ei];
        net.params[gi].values[ei] = orig + step;
        let loss_plus = net.train_loss_value(batch, labels)?;
        net.params[gi].values[ei] = orig - step;
        let loss_minus = net.train_loss_value(batch, labels)?;
        net.params[gi].values[ei] = orig;
        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let a = analytic[gi][ei];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
