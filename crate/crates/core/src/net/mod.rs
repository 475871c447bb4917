//! Differentiable network engine.
//!
//! Networks are flat tapes of nodes over [`Tensor`] activations with all
//! learnable state in named [`ParamGroup`]s. Two architecture families are
//! built in: `mlp-bn` (Linear-BN-ReLU stacks) and `microwrn` (depth-16
//! pre-activation wide residual nets). Arbitrary compositions can be built
//! with [`NetBuilder`] for tests and probes.

mod gradcheck;
pub(crate) mod layers;

pub use gradcheck::finite_diff_check;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, standard_normal};
use crate::tensor::{Real, Tensor};
use layers::{BatchNorm, BnCache, Conv, Linear};

/// A named flat parameter block with gradient storage.
#[derive(Debug, Clone)]
pub struct ParamGroup<F: Real> {
    pub id: String,
    pub values: Vec<F>,
    pub grads: Vec<F>,
    /// True for conv/linear weights whose output reaches a normalization
    /// layer; false for BN affine parameters and the classification head.
    pub scale_invariant: bool,
    pub decay_enabled: bool,
}

impl<F: Real> ParamGroup<F> {
    pub fn new(id: impl Into<String>, values: Vec<F>, scale_invariant: bool) -> Self {
        let grads = vec![F::zero(); values.len()];
        ParamGroup { id: id.into(), values, grads, scale_invariant, decay_enabled: true }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which parameter groups an operation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSubset {
    All,
    ScaleInvariantOnly,
    HeadOnly,
}

impl ParamSubset {
    fn selects<F: Real>(self, g: &ParamGroup<F>) -> bool {
        match self {
            ParamSubset::All => true,
            ParamSubset::ScaleInvariantOnly => g.scale_invariant,
            ParamSubset::HeadOnly => g.id.starts_with("head."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchFamily {
    MlpBn,
    Microwrn,
}

/// Architecture description: family, depth, width multiplier, task shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: ArchFamily,
    /// microwrn: total depth (16 = 2 blocks per stage). mlp-bn: hidden layer count.
    pub depth: usize,
    /// microwrn: width multiplier k. mlp-bn: hidden units per layer.
    pub width: usize,
    pub num_classes: usize,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 {
            return Err(Error::Config(format!("width must be >= 1, got {}", self.width)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input_shape has a zero dim: {:?}", self.input_shape)));
        }
        match self.family {
            ArchFamily::Microwrn => {
                if self.depth < 10 || (self.depth - 4) % 6 != 0 {
                    return Err(Error::Config(format!(
                        "microwrn depth must satisfy (depth - 4) % 6 == 0, got {}",
                        self.depth
                    )));
                }
                if h < 8 || w < 8 {
                    return Err(Error::Config(format!(
                        "microwrn input must be at least 8x8, got {h}x{w}"
                    )));
                }
            }
            ArchFamily::MlpBn => {
                if self.depth < 1 {
                    return Err(Error::Config("mlp-bn needs at least one hidden layer".into()));
                }
            }
        }
        Ok(())
    }

    pub fn blocks_per_stage(&self) -> usize {
        (self.depth - 4) / 6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One node of the network tape.
#[derive(Debug, Clone)]
enum Node {
    Conv(Conv),
    Bn(BatchNorm),
    Relu,
    Linear(Linear),
    GlobalAvgPool,
    Flatten,
    /// Stash the current activation in a slot for a later residual add.
    Save { slot: usize },
    /// out = x + proj(saved) with identity proj when `proj` is None.
    ResAdd { slot: usize, proj: Option<Conv> },
}

enum NodeCache<F: Real> {
    None,
    Input(Tensor<F>),
    InputShape(Vec<usize>),
    Bn(BnCache<F>),
}

/// BN epsilon and running-stat momentum defaults.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Default coordinate budget for sampled finite-difference checks.
pub const FD_SAMPLED_COORDS: usize = 256;
/// Checks on nets at or below this parameter count cover every coordinate.
pub const FD_EXHAUSTIVE_LIMIT: usize = 512;

pub struct Network<F: Real> {
    pub arch: Option<ArchSpec>,
    pub params: Vec<ParamGroup<F>>,
    nodes: Vec<Node>,
    input_shape: Vec<usize>,
    num_slots: usize,
    // Populated by a cached (train-mode) forward; consumed by backward.
    caches: Vec<NodeCache<F>>,
    slots: Vec<Option<Tensor<F>>>,
}

/// Incremental network constructor that tracks the per-sample activation
/// shape, sizes every layer from it, and He-initializes weights.
pub struct NetBuilder<F: Real> {
    input_shape: Vec<usize>,
    cur: Vec<usize>,
    nodes: Vec<Node>,
    params: Vec<ParamGroup<F>>,
    slot_shapes: Vec<Vec<usize>>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<F: Real> NetBuilder<F> {
    /// `input_shape` is per-sample, e.g. `[3, 32, 32]`.
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        NetBuilder {
            input_shape: input_shape.to_vec(),
            cur: input_shape.to_vec(),
            nodes: Vec::new(),
            params: Vec::new(),
            slot_shapes: Vec::new(),
            rng: derive_rng(seed, "init", 0),
        }
    }

    fn he_normal(&mut self, len: usize, fan_in: usize) -> Vec<F> {
        let std = (2.0 / fan_in as f64).sqrt();
        (0..len).map(|_| F::of(standard_normal(&mut self.rng) * std)).collect()
    }

    fn add_conv(&mut self, id: &str, out_c: usize, k: usize, stride: usize, pad: usize) {
        let (in_c, h, w) = match *self.cur.as_slice() {
            [c, h, w] => (c, h, w),
            _ => panic!("conv needs a rank-3 activation, got {:?}", self.cur),
        };
        let conv = Conv { w: self.params.len(), in_c, out_c, k, stride, pad };
        let (ho, wo) = conv.out_hw(h, w);
        let fan_in = in_c * k * k;
        let values = self.he_normal(conv.weight_len(), fan_in);
        self.params.push(ParamGroup::new(id, values, true));
        self.nodes.push(Node::Conv(conv));
        self.cur = vec![out_c, ho, wo];
    }

    pub fn conv3x3(&mut self, id: &str, out_c: usize, stride: usize) -> &mut Self {
        self.add_conv(id, out_c, 3, stride, 1);
        self
    }

    pub fn conv1x1(&mut self, id: &str, out_c: usize, stride: usize) -> &mut Self {
        self.add_conv(id, out_c, 1, stride, 0);
        self
    }

    pub fn batch_norm(&mut self, id: &str) -> &mut Self {
        let channels = self.cur[0];
        let mut values = vec![F::one(); channels];
        values.extend(vec![F::zero(); channels]);
        let mut group = ParamGroup::new(id, values, false);
        group.scale_invariant = false;
        self.params.push(group);
        self.nodes.push(Node::Bn(BatchNorm::new(
            self.params.len() - 1,
            channels,
            BN_EPS,
            BN_MOMENTUM,
        )));
        self
    }

    pub fn relu(&mut self) -> &mut Self {
        self.nodes.push(Node::Relu);
        self
    }

    pub fn flatten(&mut self) -> &mut Self {
        self.cur = vec![self.cur.iter().product()];
        self.nodes.push(Node::Flatten);
        self
    }

    pub fn global_avg_pool(&mut self) -> &mut Self {
        assert_eq!(self.cur.len(), 3, "global average pool needs a rank-3 activation");
        self.cur = vec![self.cur[0]];
        self.nodes.push(Node::GlobalAvgPool);
        self
    }

    pub fn linear(&mut self, id: &str, out_f: usize, bias: bool, scale_invariant: bool) -> &mut Self {
        let in_f = match *self.cur.as_slice() {
            [d] => d,
            _ => panic!("linear needs a rank-1 activation, got {:?}", self.cur),
        };
        let w_idx = self.params.len();
        let values = self.he_normal(in_f * out_f, in_f);
        self.params.push(ParamGroup::new(format!("{id}.weight"), values, scale_invariant));
        let b_idx = if bias {
            self.params.push(ParamGroup::new(
                format!("{id}.bias"),
                vec![F::zero(); out_f],
                false,
            ));
            Some(self.params.len() - 1)
        } else {
            None
        };
        self.nodes.push(Node::Linear(Linear { w: w_idx, b: b_idx, in_f, out_f }));
        self.cur = vec![out_f];
        self
    }

    /// Stash the current activation; returns the slot id for `res_add`.
    pub fn save(&mut self) -> usize {
        let slot = self.slot_shapes.len();
        self.slot_shapes.push(self.cur.clone());
        self.nodes.push(Node::Save { slot });
        slot
    }

    /// Residual add against a saved slot, with an optional 1x1 projection
    /// (sized from the slot's shape to the current shape).
    pub fn res_add(&mut self, slot: usize, proj_id: Option<&str>) -> &mut Self {
        let proj = proj_id.map(|id| {
            let (in_c, h_in, _) = match *self.slot_shapes[slot].as_slice() {
                [c, h, w] => (c, h, w),
                _ => panic!("projection source must be rank-3"),
            };
            let out_c = self.cur[0];
            let h_out = self.cur[1];
            let stride = h_in / h_out;
            let conv = Conv { w: self.params.len(), in_c, out_c, k: 1, stride, pad: 0 };
            let values = self.he_normal(conv.weight_len(), in_c);
            self.params.push(ParamGroup::new(id, values, true));
            conv
        });
        if proj.is_none() {
            assert_eq!(
                self.slot_shapes[slot], self.cur,
                "identity residual add requires matching shapes"
            );
        }
        self.nodes.push(Node::ResAdd { slot, proj });
        self
    }

    pub fn build(self) -> Network<F> {
        let n_nodes = self.nodes.len();
        Network {
            arch: None,
            params: self.params,
            nodes: self.nodes,
            input_shape: self.input_shape,
            num_slots: self.slot_shapes.len(),
            caches: (0..n_nodes).map(|_| NodeCache::None).collect(),
            slots: Vec::new(),
        }
    }
}

/// Deterministic construction of a standard family network.
pub fn build_network<F: Real>(spec: &ArchSpec, seed: u64) -> Result<Network<F>> {
    spec.validate()?;
    let (c, h, w) = spec.input_shape;
    let mut b = NetBuilder::<F>::new(&[c, h, w], seed);
    match spec.family {
        ArchFamily::MlpBn => {
            b.flatten();
            for l in 0..spec.depth {
                b.linear(&format!("fc{l}"), spec.width, false, true);
                b.batch_norm(&format!("bn{l}.affine"));
                b.relu();
            }
            b.linear("head", spec.num_classes, true, false);
        }
        ArchFamily::Microwrn => {
            let k = spec.width;
            let n_blocks = spec.blocks_per_stage();
            b.conv3x3("stem.conv", 16, 1);
            let mut in_c = 16;
            for (stage, (&width_mul, &stage_stride)) in
                [16, 32, 64].iter().zip([1usize, 2, 2].iter()).enumerate()
            {
                let out_c = width_mul * k;
                for blk in 0..n_blocks {
                    let stride = if blk == 0 { stage_stride } else { 1 };
                    let p = format!("s{stage}.b{blk}");
                    if in_c == out_c && stride == 1 {
                        let slot = b.save();
                        b.batch_norm(&format!("{p}.bn1.affine"));
                        b.relu();
                        b.conv3x3(&format!("{p}.conv1"), out_c, stride);
                        b.batch_norm(&format!("{p}.bn2.affine"));
                        b.relu();
                        b.conv3x3(&format!("{p}.conv2"), out_c, 1);
                        b.res_add(slot, None);
                    } else {
                        // Shape change: the projection shortcut taps the shared
                        // pre-activation, as in the reference WRN layout.
                        b.batch_norm(&format!("{p}.bn1.affine"));
                        b.relu();
                        let slot = b.save();
                        b.conv3x3(&format!("{p}.conv1"), out_c, stride);
                        b.batch_norm(&format!("{p}.bn2.affine"));
                        b.relu();
                        b.conv3x3(&format!("{p}.conv2"), out_c, 1);
                        b.res_add(slot, Some(&format!("{p}.proj")));
                    }
                    in_c = out_c;
                }
            }
            b.batch_norm("final.bn.affine");
            b.relu();
            b.global_avg_pool();
            b.linear("head", spec.num_classes, true, false);
        }
    }
    let mut net = b.build();
    net.arch = Some(spec.clone());
    Ok(net)
}

struct PassOpts {
    mode: Mode,
    update_stats: bool,
    keep_cache: bool,
}

impl<F: Real> Network<F> {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|g| g.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.params {
            for v in &mut g.grads {
                *v = F::zero();
            }
        }
    }

    /// Per-BN (running_mean, running_var), in tape order.
    pub fn bn_running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Bn(bn) => Some((bn.running_mean.clone(), bn.running_var.clone())),
                _ => None,
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor<F>) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Input(format!(
                "batch shape {:?} does not match input shape {:?} with a leading batch dim",
                shape, self.input_shape
            )));
        }
        if batch.dim0() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        Ok(())
    }

    fn node_label(&self, idx: usize) -> String {
        match &self.nodes[idx] {
            Node::Conv(c) => format!("conv[{}]", self.params[c.w].id),
            Node::Bn(bn) => format!("bn[{}]", self.params[bn.affine].id),
            Node::Linear(l) => format!("linear[{}]", self.params[l.w].id),
            Node::Relu => format!("relu@{idx}"),
            Node::GlobalAvgPool => format!("gap@{idx}"),
            Node::Flatten => format!("flatten@{idx}"),
            Node::Save { .. } => format!("save@{idx}"),
            Node::ResAdd { .. } => format!("res_add@{idx}"),
        }
    }

    fn forward_opts(&mut self, batch: &Tensor<F>, opts: &PassOpts) -> Result<Tensor<F>> {
        self.check_batch(batch)?;
        self.slots = (0..self.num_slots).map(|_| None).collect();
        if opts.keep_cache {
            self.caches = (0..self.nodes.len()).map(|_| NodeCache::None).collect();
        }
        let mut x = batch.clone();
        for i in 0..self.nodes.len() {
            let mut cache = NodeCache::None;
            // Nodes are detached one at a time so slot/param state stays reachable.
            let mut node = std::mem::replace(&mut self.nodes[i], Node::Relu);
            let y = match &mut node {
                Node::Conv(conv) => {
                    let y = conv.forward(&x, &self.params[conv.w].values);
                    if opts.keep_cache {
                        cache = NodeCache::Input(x);
                    }
                    y
                }
                Node::Bn(bn) => match opts.mode {
                    Mode::Train => {
                        let (y, bn_cache) =
                            bn.forward_train(&x, &self.params[bn.affine].values, opts.update_stats);
                        if opts.keep_cache {
                            cache = NodeCache::Bn(bn_cache);
                        }
                        y
                    }
                    Mode::Eval => bn.forward_eval(&x, &self.params[bn.affine].values),
                },
                Node::Relu => {
                    let y = layers::relu_forward(&x);
                    if opts.keep_cache {
                        cache = NodeCache::Input(x);
                    }
                    y
                }
                Node::Linear(lin) => {
                    let bias = lin.b.map(|bi| &self.params[bi].values);
                    let y = lin.forward(&x, &self.params[lin.w].values, bias.map(|v| v.as_slice()));
                    if opts.keep_cache {
                        cache = NodeCache::Input(x);
                    }
                    y
                }
                Node::GlobalAvgPool => {
                    let y = layers::global_avg_pool_forward(&x);
                    if opts.keep_cache {
                        cache = NodeCache::InputShape(x.shape().to_vec());
                    }
                    y
                }
                Node::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = shape[0];
                    let flat: usize = shape[1..].iter().product();
                    if opts.keep_cache {
                        cache = NodeCache::InputShape(shape);
                    }
                    x.reshaped(&[n, flat])
                }
                Node::Save { slot } => {
                    self.slots[*slot] = Some(x.clone());
                    x
                }
                Node::ResAdd { slot, proj } => {
                    let saved = self.slots[*slot]
                        .as_ref()
                        .expect("res_add before its save node");
                    let shortcut = match proj {
                        Some(conv) => conv.forward(saved, &self.params[conv.w].values),
                        None => saved.clone(),
                    };
                    debug_assert_eq!(shortcut.shape(), x.shape());
                    let mut y = x;
                    for (v, s) in y.data_mut().iter_mut().zip(shortcut.data()) {
                        *v = *v + *s;
                    }
                    y
                }
            };
            self.nodes[i] = node;
            if opts.keep_cache {
                self.caches[i] = cache;
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass. Train mode uses batch statistics, updates BN running
    /// stats, and caches activations for a subsequent backward; eval mode
    /// uses running statistics and leaves no cache.
    pub fn forward(&mut self, batch: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let opts = match mode {
            Mode::Train => PassOpts { mode, update_stats: true, keep_cache: true },
            Mode::Eval => PassOpts { mode, update_stats: false, keep_cache: false },
        };
        self.forward_opts(batch, &opts)
    }

    fn backward(&mut self, dlogits: Tensor<F>) {
        let mut slot_grads: Vec<Option<Tensor<F>>> = (0..self.num_slots).map(|_| None).collect();
        let mut dy = dlogits;
        for i in (0..self.nodes.len()).rev() {
            let mut node = std::mem::replace(&mut self.nodes[i], Node::Relu);
            let cache = std::mem::replace(&mut self.caches[i], NodeCache::None);
            let dx = match (&mut node, cache) {
                (Node::Conv(conv), NodeCache::Input(x)) => {
                    let (w_vals, w_grads) = values_and_grads(&mut self.params, conv.w);
                    conv.backward(&x, &dy, w_vals, w_grads)
                }
                (Node::Bn(bn), NodeCache::Bn(bn_cache)) => {
                    let (vals, grads) = values_and_grads(&mut self.params, bn.affine);
                    bn.backward(&bn_cache, &dy, vals, grads)
                }
                (Node::Relu, NodeCache::Input(x)) => layers::relu_backward(&x, &dy),
                (Node::Linear(lin), NodeCache::Input(x)) => {
                    let (w_vals, w_grads, b_grads) =
                        linear_param_views(&mut self.params, lin.w, lin.b);
                    lin.backward(&x, &dy, w_vals, w_grads, b_grads)
                }
                (Node::GlobalAvgPool, NodeCache::InputShape(shape)) => {
                    layers::global_avg_pool_backward(&shape, &dy)
                }
                (Node::Flatten, NodeCache::InputShape(shape)) => dy.reshaped(&shape),
                (Node::Save { slot }, _) => {
                    let mut dx = dy;
                    if let Some(extra) = slot_grads[*slot].take() {
                        for (v, e) in dx.data_mut().iter_mut().zip(extra.data()) {
                            *v = *v + *e;
                        }
                    }
                    dx
                }
                (Node::ResAdd { slot, proj }, _) => {
                    let dslot = match proj {
                        Some(conv) => {
                            let saved = self.slots[*slot]
                                .as_ref()
                                .expect("slot cleared before backward")
                                .clone();
                            let (w_vals, w_grads) = values_and_grads(&mut self.params, conv.w);
                            conv.backward(&saved, &dy, w_vals, w_grads)
                        }
                        None => dy.clone(),
                    };
                    slot_grads[*slot] = Some(dslot);
                    dy
                }
                (node, _) => panic!("missing cache for node {node:?} in backward"),
            };
            self.nodes[i] = node;
            dy = dx;
        }
    }

    /// Mean softmax cross-entropy with gradient accumulation into every
    /// parameter group. Runs a train-mode forward (with running-stat update)
    /// followed by a full backward.
    pub fn loss_and_grad(&mut self, batch: &Tensor<F>, labels: &[usize]) -> Result<f64> {
        self.loss_and_grad_with(batch, labels, true)
    }

    /// As [`Network::loss_and_grad`] with running-stat updates made optional
    /// so probes and gradient checks leave the network state untouched.
    pub fn loss_and_grad_with(
        &mut self,
        batch: &Tensor<F>,
        labels: &[usize],
        update_stats: bool,
    ) -> Result<f64> {
        let opts = PassOpts { mode: Mode::Train, update_stats, keep_cache: true };
        let logits = self.forward_opts(batch, &opts)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical { context: self.first_nonfinite_label(&logits) });
        }
        self.zero_grads();
        self.backward(dlogits);
        Ok(loss)
    }

    /// Train-mode loss without caching, gradients, or stat updates.
    pub fn train_loss_value(&mut self, batch: &Tensor<F>, labels: &[usize]) -> Result<f64> {
        let opts = PassOpts { mode: Mode::Train, update_stats: false, keep_cache: false };
        let logits = self.forward_opts(batch, &opts)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical { context: self.first_nonfinite_label(&logits) });
        }
        Ok(loss)
    }

    fn first_nonfinite_label(&self, logits: &Tensor<F>) -> String {
        // Walk the cached activations for the first layer that went non-finite.
        for (i, cache) in self.caches.iter().enumerate() {
            let bad = match cache {
                NodeCache::Input(x) => !x.all_finite(),
                NodeCache::Bn(c) => c.xhat.iter().any(|v| !v.is_finite()),
                _ => false,
            };
            if bad {
                return self.node_label(i);
            }
        }
        if !logits.all_finite() {
            return "logits".into();
        }
        "loss".into()
    }

    /// Euclidean norm of the concatenated selected parameter values.
    pub fn param_norm(&self, subset: ParamSubset) -> f64 {
        let mut acc = 0.0f64;
        for g in self.params.iter().filter(|g| subset.selects(g)) {
            for v in &g.values {
                let x = v.as_f64();
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    /// Multiply the selected parameter values by `c` in place.
    pub fn scale_group(&mut self, c: f64, subset: ParamSubset) -> Result<()> {
        if !(c > 0.0) {
            return Err(Error::Input(format!("scale factor must be positive, got {c}")));
        }
        let cf = F::of(c);
        for g in self.params.iter_mut().filter(|g| subset.selects(g)) {
            for v in &mut g.values {
                *v = *v * cf;
            }
        }
        Ok(())
    }

    /// Snapshot selected parameter values for exact restoration.
    pub fn snapshot_values(&self, subset: ParamSubset) -> Vec<(usize, Vec<F>)> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, g)| subset.selects(g))
            .map(|(i, g)| (i, g.values.clone()))
            .collect()
    }

    pub fn restore_values(&mut self, snapshot: &[(usize, Vec<F>)]) {
        for (i, vals) in snapshot {
            self.params[*i].values.copy_from_slice(vals);
        }
    }

    /// Dot product of gradients against values over the selected groups.
    pub fn grad_param_dot(&self, subset: ParamSubset) -> GradDot {
        grad_param_dot(&self.params, subset)
    }
}

/// Result of a gradient-parameter alignment probe.
#[derive(Debug, Clone, Copy)]
pub struct GradDot {
    pub dot: f64,
    /// `|dot| / (||g|| * ||theta||)`; `None` when either norm is zero.
    pub cosine: Option<f64>,
}

impl GradDot {
    pub fn cosine_checked(&self) -> Result<f64> {
        self.cosine.ok_or(Error::UndefinedCosine)
    }
}

/// Free-standing form of the dot probe, usable on hand-built groups.
pub fn grad_param_dot<F: Real>(params: &[ParamGroup<F>], subset: ParamSubset) -> GradDot {
    let mut dot = 0.0f64;
    let mut g2 = 0.0f64;
    let mut v2 = 0.0f64;
    for g in params.iter().filter(|g| subset.selects(g)) {
        for (gr, va) in g.grads.iter().zip(&g.values) {
            let gf = gr.as_f64();
            let vf = va.as_f64();
            dot += gf * vf;
            g2 += gf * gf;
            v2 += vf * vf;
        }
    }
    let cosine = if g2 > 0.0 && v2 > 0.0 {
        Some(dot.abs() / (g2.sqrt() * v2.sqrt()))
    } else {
        None
    };
    GradDot { dot, cosine }
}

/// Mean softmax cross-entropy over the batch; returns the loss and dlogits.
pub fn softmax_cross_entropy<F: Real>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(f64, Tensor<F>)> {
    let shape = logits.shape();
    let (n, k) = match *shape {
        [n, k] => (n, k),
        _ => return Err(Error::Input(format!("logits must be rank-2, got {shape:?}"))),
    };
    if labels.len() != n {
        return Err(Error::Input(format!(
            "labels length {} does not match batch size {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let ld = logits.data();
    let mut dlogits = Tensor::zeros(shape);
    let dd = dlogits.data_mut();
    let inv_n = 1.0 / n as f64;
    let mut loss_sum = 0.0f64;
    for ni in 0..n {
        let row = &ld[ni * k..(ni + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let mut exp_sum = 0.0f64;
        for v in row {
            exp_sum += (v.as_f64() - max).exp();
        }
        let lse = max + exp_sum.ln();
        loss_sum += lse - row[labels[ni]].as_f64();
        for ki in 0..k {
            let p = (row[ki].as_f64() - lse).exp();
            let ind = if ki == labels[ni] { 1.0 } else { 0.0 };
            dd[ni * k + ki] = F::of((p - ind) * inv_n);
        }
    }
    Ok((loss_sum * inv_n, dlogits))
}

fn values_and_grads<F: Real>(params: &mut [ParamGroup<F>], idx: usize) -> (&[F], &mut [F]) {
    let g = &mut params[idx];
    let (values, grads) = (&g.values, &mut g.grads);
    (values.as_slice(), grads.as_mut_slice())
}

fn linear_param_views<F: Real>(
    params: &mut [ParamGroup<F>],
    w: usize,
    b: Option<usize>,
) -> (&[F], &mut [F], Option<&mut [F]>) {
    match b {
        None => {
            let (vals, grads) = values_and_grads(params, w);
            (vals, grads, None)
        }
        Some(bi) => {
            assert_ne!(w, bi);
            let (lo, hi) = if w < bi { (w, bi) } else { (bi, w) };
            let (left, right) = params.split_at_mut(hi);
            let (wg, bg) = if w < bi { (&mut left[lo], &mut right[0]) } else { (&mut right[0], &mut left[lo]) };
            (wg.values.as_slice(), wg.grads.as_mut_slice(), Some(bg.grads.as_mut_slice()))
        }
    }
}

#[cfg(test)]
mod tests;
