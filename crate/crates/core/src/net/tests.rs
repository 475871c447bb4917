use super::*;
use crate::rng::derive_rng;
use rand::Rng;

fn arch(family: ArchFamily, depth: usize, width: usize, classes: usize, shape: (usize, usize, usize)) -> ArchSpec {
    ArchSpec { family, depth, width, num_classes: classes, input_shape: shape }
}

fn tiny_mlp_spec() -> ArchSpec {
    arch(ArchFamily::MlpBn, 1, 8, 3, (1, 4, 4))
}

fn random_batch<F: Real>(shape: &[usize], classes: usize, seed: u64) -> (Tensor<F>, Vec<usize>) {
    let mut rng = derive_rng(seed, "test-batch", 0);
    let n = shape[0];
    let len: usize = shape.iter().product();
    let data: Vec<F> = (0..len).map(|_| F::of(rng.gen::<f64>())).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::from_vec(shape, data), labels)
}

/// Closed-form parameter count for the depth-16 residual family.
fn microwrn_param_count_oracle(k: usize, classes: usize, in_ch: usize) -> usize {
    let mut count = in_ch * 16 * 9; // stem
    let mut in_c = 16usize;
    for (stage, base) in [16usize, 32, 64].iter().enumerate() {
        let out_c = base * k;
        for blk in 0..2 {
            let stride = if blk == 0 && stage > 0 { 2 } else { 1 };
            count += 2 * in_c; // bn1
            count += in_c * out_c * 9; // conv1
            count += 2 * out_c; // bn2
            count += out_c * out_c * 9; // conv2
            if in_c != out_c || stride != 1 {
                count += in_c * out_c; // 1x1 projection
            }
            in_c = out_c;
        }
    }
    count += 2 * in_c; // final bn
    count += in_c * classes + classes; // head
    count
}

#[test]
fn microwrn_k1_param_count_near_published_size() {
    let net = build_network::<f32>(&arch(ArchFamily::Microwrn, 16, 1, 10, (3, 32, 32)), 0).unwrap();
    let count = net.param_count();
    assert_eq!(count, microwrn_param_count_oracle(1, 10, 3));
    let rel = (count as f64 - 0.17e6).abs() / 0.17e6;
    assert!(rel < 0.03, "k=1 count {count} off by {rel}");
}

#[test]
fn microwrn_k22_param_count_near_published_size() {
    let count = microwrn_param_count_oracle(22, 10, 3);
    let rel = (count as f64 - 82.73e6).abs() / 82.73e6;
    assert!(rel < 0.03, "k=22 count {count} off by {rel}");
    // Spot-check the oracle against a real (cheaper) build at k=3.
    let net = build_network::<f32>(&arch(ArchFamily::Microwrn, 16, 3, 10, (3, 32, 32)), 0).unwrap();
    assert_eq!(net.param_count(), microwrn_param_count_oracle(3, 10, 3));
}

#[test]
fn build_is_deterministic_in_seed() {
    let spec = tiny_mlp_spec();
    let a = build_network::<f32>(&spec, 42).unwrap();
    let b = build_network::<f32>(&spec, 42).unwrap();
    for (ga, gb) in a.params.iter().zip(&b.params) {
        assert_eq!(ga.id, gb.id);
        assert_eq!(ga.values, gb.values, "group {} differs across identical builds", ga.id);
    }
    let c = build_network::<f32>(&spec, 43).unwrap();
    assert_ne!(a.params[0].values, c.params[0].values);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(build_network::<f32>(&arch(ArchFamily::Microwrn, 15, 1, 10, (3, 32, 32)), 0).is_err());
    assert!(build_network::<f32>(&arch(ArchFamily::Microwrn, 16, 0, 10, (3, 32, 32)), 0).is_err());
    assert!(build_network::<f32>(&arch(ArchFamily::MlpBn, 0, 8, 10, (1, 4, 4)), 0).is_err());
}

#[test]
fn forward_shape_and_batch_validation() {
    let spec = arch(ArchFamily::Microwrn, 16, 1, 10, (3, 32, 32));
    let mut net = build_network::<f32>(&spec, 1).unwrap();
    let (batch, _) = random_batch::<f32>(&[10, 3, 32, 32], 10, 5);
    let logits = net.forward(&batch, Mode::Eval).unwrap();
    assert_eq!(logits.shape(), &[10, 10]);

    let (bad, _) = random_batch::<f32>(&[2, 3, 16, 16], 10, 5);
    assert!(matches!(net.forward(&bad, Mode::Eval), Err(Error::Input(_))));
}

#[test]
fn zero_head_gives_uniform_logits_and_ln_k_loss() {
    let spec = arch(ArchFamily::MlpBn, 1, 8, 10, (1, 4, 4));
    let mut net = build_network::<f32>(&spec, 3).unwrap();
    for g in &mut net.params {
        if g.id.starts_with("head.") {
            g.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (batch, labels) = random_batch::<f32>(&[6, 1, 4, 4], 10, 9);
    let logits = net.forward(&batch, Mode::Train).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let loss = net.train_loss_value(&batch, &labels).unwrap();
    assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss {loss}");
}

#[test]
fn train_mode_updates_running_stats_eval_does_not() {
    let mut net = build_network::<f32>(&tiny_mlp_spec(), 1).unwrap();
    let (batch, _) = random_batch::<f32>(&[4, 1, 4, 4], 3, 2);
    let before = net.bn_running_stats();
    net.forward(&batch, Mode::Eval).unwrap();
    assert_eq!(before, net.bn_running_stats());
    net.forward(&batch, Mode::Train).unwrap();
    assert_ne!(before, net.bn_running_stats());
}

#[test]
fn loss_and_grad_is_deterministic() {
    let mut net = build_network::<f32>(&tiny_mlp_spec(), 7).unwrap();
    let (batch, labels) = random_batch::<f32>(&[5, 1, 4, 4], 3, 11);
    let l1 = net.loss_and_grad(&batch, &labels).unwrap();
    let g1: Vec<Vec<f32>> = net.params.iter().map(|g| g.grads.clone()).collect();
    let l2 = net.loss_and_grad(&batch, &labels).unwrap();
    let g2: Vec<Vec<f32>> = net.params.iter().map(|g| g.grads.clone()).collect();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn single_linear_layer_matches_closed_form_gradient() {
    // One sample through a bias-full linear layer: dW = (softmax - onehot) (x) input.
    let mut b = NetBuilder::<f64>::new(&[2], 0);
    b.linear("head", 3, true, false);
    let mut net = b.build();
    net.params[0].values = vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5];
    net.params[1].values = vec![0.0, 0.1, -0.2];
    let x = vec![1.0, 2.0];
    let label = 1usize;
    let batch = Tensor::from_vec(&[1, 2], x.clone());
    net.loss_and_grad(&batch, &[label]).unwrap();

    // Independent oracle.
    let w = [[0.1, 0.2], [0.3, -0.1], [0.0, 0.5]];
    let bias = [0.0, 0.1, -0.2];
    let logits: Vec<f64> =
        (0..3).map(|o| w[o][0] * x[0] + w[o][1] * x[1] + bias[o]).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let p: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
    for o in 0..3 {
        let d = p[o] - if o == label { 1.0 } else { 0.0 };
        for i in 0..2 {
            let got = net.params[0].grads[o * 2 + i];
            assert!((got - d * x[i]).abs() < 1e-12, "dW[{o}][{i}] {got} vs {}", d * x[i]);
        }
        assert!((net.params[1].grads[o] - d).abs() < 1e-12);
    }
}

#[test]
fn duplicated_sample_matches_single_sample_gradients() {
    let mut b = NetBuilder::<f64>::new(&[3], 0);
    b.linear("head", 4, true, false);
    let mut net = b.build();
    let x = vec![0.3, -0.7, 1.1];
    let single = Tensor::from_vec(&[1, 3], x.clone());
    let double = Tensor::from_vec(&[2, 3], [x.clone(), x].concat());
    net.loss_and_grad(&single, &[2]).unwrap();
    let g1: Vec<Vec<f64>> = net.params.iter().map(|g| g.grads.clone()).collect();
    net.loss_and_grad(&double, &[2, 2]).unwrap();
    let g2: Vec<Vec<f64>> = net.params.iter().map(|g| g.grads.clone()).collect();
    assert_eq!(g1, g2);
}

#[test]
fn param_norm_pythagorean_and_zero() {
    let mut b = NetBuilder::<f32>::new(&[1], 0);
    b.linear("head", 2, false, false);
    let mut net = b.build();
    net.params[0].values = vec![3.0, 4.0];
    assert_eq!(net.param_norm(ParamSubset::All), 5.0);
    net.params[0].values = vec![0.0, 0.0];
    assert_eq!(net.param_norm(ParamSubset::All), 0.0);
}

#[test]
fn param_norm_matches_brute_force_oracle() {
    let mut rng = derive_rng(17, "norm-oracle", 0);
    let values: Vec<f32> = (0..100).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    let mut b = NetBuilder::<f32>::new(&[10], 0);
    b.linear("fc", 10, false, true);
    let mut net = b.build();
    net.params[0].values = values.clone();
    let oracle = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    let got = net.param_norm(ParamSubset::All);
    assert!((got - oracle).abs() / oracle < 1e-12, "{got} vs {oracle}");
}

#[test]
fn scale_by_one_is_exact_identity() {
    let mut net = build_network::<f32>(&tiny_mlp_spec(), 5).unwrap();
    let (batch, labels) = random_batch::<f32>(&[6, 1, 4, 4], 3, 21);
    let before = net.train_loss_value(&batch, &labels).unwrap();
    net.scale_group(1.0, ParamSubset::ScaleInvariantOnly).unwrap();
    let after = net.train_loss_value(&batch, &labels).unwrap();
    assert_eq!(before, after);
}

#[test]
fn scale_invariant_groups_leave_train_loss_unchanged() {
    for seed in 0..3u64 {
        let mut net =
            build_network::<f32>(&arch(ArchFamily::Microwrn, 16, 1, 10, (3, 16, 16)), seed)
                .unwrap();
        let (batch, labels) = random_batch::<f32>(&[8, 3, 16, 16], 10, 100 + seed);
        let base = net.train_loss_value(&batch, &labels).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let snapshot = net.snapshot_values(ParamSubset::ScaleInvariantOnly);
            net.scale_group(c, ParamSubset::ScaleInvariantOnly).unwrap();
            let scaled = net.train_loss_value(&batch, &labels).unwrap();
            net.restore_values(&snapshot);
            let rel = (scaled - base).abs() / base.abs();
            assert!(rel <= 1e-5, "seed {seed} c {c}: relative change {rel}");
        }
    }
}

#[test]
fn scaling_the_head_changes_the_loss() {
    let mut net = build_network::<f32>(&tiny_mlp_spec(), 9).unwrap();
    let (batch, labels) = random_batch::<f32>(&[6, 1, 4, 4], 3, 33);
    let base = net.train_loss_value(&batch, &labels).unwrap();
    net.scale_group(2.0, ParamSubset::HeadOnly).unwrap();
    let scaled = net.train_loss_value(&batch, &labels).unwrap();
    assert!((scaled - base).abs() / base.abs() > 1e-3, "{base} vs {scaled}");
}

#[test]
fn scale_group_rejects_nonpositive_factors() {
    let mut net = build_network::<f32>(&tiny_mlp_spec(), 9).unwrap();
    assert!(net.scale_group(0.0, ParamSubset::All).is_err());
    assert!(net.scale_group(-2.0, ParamSubset::All).is_err());
}

#[test]
fn gradients_are_orthogonal_to_scale_invariant_params() {
    for seed in 0..3u64 {
        let mut net =
            build_network::<f32>(&arch(ArchFamily::Microwrn, 16, 1, 10, (3, 16, 16)), seed)
                .unwrap();
        let (batch, labels) = random_batch::<f32>(&[8, 3, 16, 16], 10, 200 + seed);
        net.loss_and_grad(&batch, &labels).unwrap();
        let probe = net.grad_param_dot(ParamSubset::ScaleInvariantOnly);
        let cosine = probe.cosine_checked().unwrap();
        assert!(cosine <= 1e-5, "seed {seed}: cosine {cosine}");
    }
}

#[test]
fn grad_param_dot_zero_grads_and_hand_case() {
    // Zero gradients: dot is 0 and the cosine is undefined.
    let group = ParamGroup::<f64>::new("w", vec![1.0, 2.0], true);
    let probe = grad_param_dot(&[group], ParamSubset::ScaleInvariantOnly);
    assert_eq!(probe.dot, 0.0);
    assert!(probe.cosine.is_none());
    assert!(matches!(probe.cosine_checked(), Err(Error::UndefinedCosine)));

    // Linear 1->2 with both weights 1, input 1, label 1: logits (1,1),
    // softmax (0.5, 0.5), so the gradient on the first weight is 0.5.
    let mut b = NetBuilder::<f64>::new(&[1], 0);
    b.linear("fc", 2, false, true);
    let mut net = b.build();
    net.params[0].values = vec![1.0, 1.0];
    net.loss_and_grad(&Tensor::from_vec(&[1, 1], vec![1.0]), &[1]).unwrap();
    assert!((net.params[0].grads[0] - 0.5).abs() < 1e-12);
    assert!((net.params[0].grads[1] + 0.5).abs() < 1e-12);

    // A 1-D group holding just that coordinate: dot = 0.5 * 1.0.
    let mut single = ParamGroup::<f64>::new("w0", vec![1.0], true);
    single.grads = vec![net.params[0].grads[0]];
    let probe = grad_param_dot(&[single], ParamSubset::ScaleInvariantOnly);
    assert!((probe.dot - 0.5).abs() < 1e-12);
}

#[test]
fn finite_diff_matches_analytic_on_tiny_mlp() {
    let mut net = build_network::<f64>(&tiny_mlp_spec(), 13).unwrap();
    let (batch, labels) = random_batch::<f64>(&[4, 1, 4, 4], 3, 55);
    let max_rel = finite_diff_check(&mut net, &batch, &labels, 1e-4, 0).unwrap();
    assert!(max_rel < 1e-4, "max relative error {max_rel}");
}

#[test]
fn finite_diff_is_near_exact_for_a_quadratic() {
    // J = theta^2 at theta = 3: central differences are exact for quadratics
    // up to rounding.
    let f = |x: f64| x * x;
    let h = 1e-4;
    let numeric = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
    assert!((numeric - 6.0).abs() / 6.0 < 1e-10, "{numeric}");
}

#[test]
fn finite_diff_on_microwrn_sampled_coordinates() {
    let spec = arch(ArchFamily::Microwrn, 16, 1, 10, (3, 8, 8));
    let mut net = build_network::<f64>(&spec, 2).unwrap();
    let (batch, labels) = random_batch::<f64>(&[2, 3, 8, 8], 10, 77);
    let max_rel = finite_diff_check(&mut net, &batch, &labels, 1e-4, 3).unwrap();
    assert!(max_rel < 1e-3, "max relative error {max_rel}");
}

#[test]
fn softmax_cross_entropy_validates_labels() {
    let logits = Tensor::from_vec(&[2, 3], vec![0.0f32; 6]);
    assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
    let (loss, _) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
    assert!((loss - 3.0f64.ln()).abs() < 1e-12);
}
