//! Layer kernels: forward and backward passes over flat tensors.
//!
//! Reductions (sums, means, variances) accumulate in `f64` regardless of the
//! network scalar type so that single-precision nets keep tight agreement
//! with the algebraic identities the probes assert.

use crate::tensor::{Real, Tensor};

/// 2-D convolution, no bias, square kernel, zero padding.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    /// Parameter group index of the weight block, laid out (out_c, in_c, k, k).
    pub w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn forward<F: Real>(&self, x: &Tensor<F>, weights: &[F]) -> Tensor<F> {
        let [n, cin, h, w] = dims4(x);
        debug_assert_eq!(cin, self.in_c);
        let (ho, wo) = self.out_hw(h, w);
        let mut out = Tensor::zeros(&[n, self.out_c, ho, wo]);
        let xd = x.data();
        let od = out.data_mut();
        for ni in 0..n {
            for oc in 0..self.out_c {
                let wbase = oc * self.in_c * self.k * self.k;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0f64;
                        for ic in 0..self.in_c {
                            let xbase = ((ni * cin) + ic) * h;
                            let kbase = wbase + ic * self.k * self.k;
                            for ky in 0..self.k {
                                let iy = oy * self.stride + ky;
                                if iy < self.pad || iy >= h + self.pad {
                                    continue;
                                }
                                let iy = iy - self.pad;
                                let row = (xbase + iy) * w;
                                for kx in 0..self.k {
                                    let ix = ox * self.stride + kx;
                                    if ix < self.pad || ix >= w + self.pad {
                                        continue;
                                    }
                                    let ix = ix - self.pad;
                                    acc += xd[row + ix].as_f64()
                                        * weights[kbase + ky * self.k + kx].as_f64();
                                }
                            }
                        }
                        od[(((ni * self.out_c) + oc) * ho + oy) * wo + ox] = F::of(acc);
                    }
                }
            }
        }
        out
    }

    /// Returns dx; accumulates the weight gradient into `dw`.
    pub fn backward<F: Real>(
        &self,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        weights: &[F],
        dw: &mut [F],
    ) -> Tensor<F> {
        let [n, cin, h, w] = dims4(x);
        let [_, _, ho, wo] = dims4(dy);
        let xd = x.data();
        let dyd = dy.data();
        let mut dx_acc = vec![0.0f64; xd.len()];
        let mut dw_acc = vec![0.0f64; dw.len()];
        for ni in 0..n {
            for oc in 0..self.out_c {
                let wbase = oc * self.in_c * self.k * self.k;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = dyd[(((ni * self.out_c) + oc) * ho + oy) * wo + ox].as_f64();
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..self.in_c {
                            let xbase = ((ni * cin) + ic) * h;
                            let kbase = wbase + ic * self.k * self.k;
                            for ky in 0..self.k {
                                let iy = oy * self.stride + ky;
                                if iy < self.pad || iy >= h + self.pad {
                                    continue;
                                }
                                let iy = iy - self.pad;
                                let row = (xbase + iy) * w;
                                for kx in 0..self.k {
                                    let ix = ox * self.stride + kx;
                                    if ix < self.pad || ix >= w + self.pad {
                                        continue;
                                    }
                                    let ix = ix - self.pad;
                                    let widx = kbase + ky * self.k + kx;
                                    dw_acc[widx] += g * xd[row + ix].as_f64();
                                    dx_acc[row + ix] += g * weights[widx].as_f64();
                                }
                            }
                        }
                    }
                }
            }
        }
        for (d, acc) in dw.iter_mut().zip(&dw_acc) {
            *d = *d + F::of(*acc);
        }
        let mut dx = Tensor::zeros(x.shape());
        for (d, acc) in dx.data_mut().iter_mut().zip(&dx_acc) {
            *d = F::of(*acc);
        }
        dx
    }
}

/// Batch normalization over layout (N, C, S) where S is the per-channel
/// spatial extent (H*W for rank-4 inputs, 1 for rank-2 inputs).
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    /// Parameter group index holding [gamma(C), beta(C)].
    pub affine: usize,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub(crate) struct BnCache<F: Real> {
    pub xhat: Vec<F>,
    pub invstd: Vec<f64>,
    pub n: usize,
    pub s: usize,
}

pub(crate) fn dims_ncs(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [n, c] => (n, c, 1),
        [n, c, h, w] => (n, c, h * w),
        _ => panic!("batch norm expects rank-2 or rank-4 input, got {shape:?}"),
    }
}

impl BatchNorm {
    pub fn new(affine: usize, channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            affine,
            channels,
            eps,
            momentum,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn forward_train<F: Real>(
        &mut self,
        x: &Tensor<F>,
        gamma_beta: &[F],
        update_stats: bool,
    ) -> (Tensor<F>, BnCache<F>) {
        let (n, c, s) = dims_ncs(x.shape());
        debug_assert_eq!(c, self.channels);
        let m = (n * s) as f64;
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        let mut xhat = vec![F::zero(); xd.len()];
        let mut invstd = vec![0.0f64; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    sum += xd[base + si].as_f64();
                }
            }
            let mean = sum / m;
            let mut var_sum = 0.0f64;
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    let d = xd[base + si].as_f64() - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            invstd[ch] = istd;
            if update_stats {
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var;
            }
            let gamma = gamma_beta[ch].as_f64();
            let beta = gamma_beta[c + ch].as_f64();
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    let xh = (xd[base + si].as_f64() - mean) * istd;
                    xhat[base + si] = F::of(xh);
                    od[base + si] = F::of(gamma * xh + beta);
                }
            }
        }
        (out, BnCache { xhat, invstd, n, s })
    }

    pub fn forward_eval<F: Real>(&self, x: &Tensor<F>, gamma_beta: &[F]) -> Tensor<F> {
        let (n, c, s) = dims_ncs(x.shape());
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        for ch in 0..c {
            let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            let gamma = gamma_beta[ch].as_f64();
            let beta = gamma_beta[c + ch].as_f64();
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    od[base + si] = F::of(gamma * (xd[base + si].as_f64() - mean) * istd + beta);
                }
            }
        }
        out
    }

    /// Train-mode backward through the batch statistics.
    pub fn backward<F: Real>(
        &self,
        cache: &BnCache<F>,
        dy: &Tensor<F>,
        gamma_beta: &[F],
        d_gamma_beta: &mut [F],
    ) -> Tensor<F> {
        let (n, c, s) = (cache.n, self.channels, cache.s);
        let m = (n * s) as f64;
        let dyd = dy.data();
        let mut dx = Tensor::zeros(dy.shape());
        let dxd = dx.data_mut();
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    let g = dyd[base + si].as_f64();
                    sum_dy += g;
                    sum_dy_xhat += g * cache.xhat[base + si].as_f64();
                }
            }
            d_gamma_beta[ch] = d_gamma_beta[ch] + F::of(sum_dy_xhat);
            d_gamma_beta[c + ch] = d_gamma_beta[c + ch] + F::of(sum_dy);
            let scale = gamma_beta[ch].as_f64() * cache.invstd[ch];
            for ni in 0..n {
                let base = ((ni * c) + ch) * s;
                for si in 0..s {
                    let g = dyd[base + si].as_f64();
                    let xh = cache.xhat[base + si].as_f64();
                    dxd[base + si] =
                        F::of(scale * (g - sum_dy / m - xh * sum_dy_xhat / m));
                }
            }
        }
        dx
    }
}

/// Dense layer, row-major weights (out_f, in_f), optional bias.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: Option<usize>,
    pub in_f: usize,
    pub out_f: usize,
}

impl Linear {
    pub fn forward<F: Real>(&self, x: &Tensor<F>, weights: &[F], bias: Option<&[F]>) -> Tensor<F> {
        let [n, in_f] = dims2(x);
        debug_assert_eq!(in_f, self.in_f);
        let xd = x.data();
        let mut out = Tensor::zeros(&[n, self.out_f]);
        let od = out.data_mut();
        for ni in 0..n {
            for o in 0..self.out_f {
                let mut acc = match bias {
                    Some(b) => b[o].as_f64(),
                    None => 0.0,
                };
                let wbase = o * self.in_f;
                let xbase = ni * self.in_f;
                for i in 0..self.in_f {
                    acc += xd[xbase + i].as_f64() * weights[wbase + i].as_f64();
                }
                od[ni * self.out_f + o] = F::of(acc);
            }
        }
        out
    }

    pub fn backward<F: Real>(
        &self,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        weights: &[F],
        dw: &mut [F],
        db: Option<&mut [F]>,
    ) -> Tensor<F> {
        let [n, _] = dims2(x);
        let xd = x.data();
        let dyd = dy.data();
        for o in 0..self.out_f {
            for i in 0..self.in_f {
                let mut acc = 0.0f64;
                for ni in 0..n {
                    acc += dyd[ni * self.out_f + o].as_f64() * xd[ni * self.in_f + i].as_f64();
                }
                let idx = o * self.in_f + i;
                dw[idx] = dw[idx] + F::of(acc);
            }
        }
        if let Some(db) = db {
            for o in 0..self.out_f {
                let mut acc = 0.0f64;
                for ni in 0..n {
                    acc += dyd[ni * self.out_f + o].as_f64();
                }
                db[o] = db[o] + F::of(acc);
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        let dxd = dx.data_mut();
        for ni in 0..n {
            for i in 0..self.in_f {
                let mut acc = 0.0f64;
                for o in 0..self.out_f {
                    acc += dyd[ni * self.out_f + o].as_f64() * weights[o * self.in_f + i].as_f64();
                }
                dxd[ni * self.in_f + i] = F::of(acc);
            }
        }
        dx
    }
}

pub(crate) fn relu_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    out
}

pub(crate) fn relu_backward<F: Real>(x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let mut dx = Tensor::zeros(x.shape());
    for ((d, &xi), &g) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
        if xi > F::zero() {
            *d = g;
        }
    }
    dx
}

pub(crate) fn global_avg_pool_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let [n, c, h, w] = dims4(x);
    let s = h * w;
    let xd = x.data();
    let mut out = Tensor::zeros(&[n, c]);
    let od = out.data_mut();
    for ni in 0..n {
        for ch in 0..c {
            let base = ((ni * c) + ch) * s;
            let mut acc = 0.0f64;
            for si in 0..s {
                acc += xd[base + si].as_f64();
            }
            od[ni * c + ch] = F::of(acc / s as f64);
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<F: Real>(in_shape: &[usize], dy: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let s = h * w;
    let [n, c] = dims2(dy);
    let dyd = dy.data();
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for ni in 0..n {
        for ch in 0..c {
            let g = F::of(dyd[ni * c + ch].as_f64() / s as f64);
            let base = ((ni * c) + ch) * s;
            for si in 0..s {
                dxd[base + si] = g;
            }
        }
    }
    dx
}

fn dims4<F: Real>(t: &Tensor<F>) -> [usize; 4] {
    match *t.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => panic!("expected rank-4 tensor, got {:?}", t.shape()),
    }
}

fn dims2<F: Real>(t: &Tensor<F>) -> [usize; 2] {
    match *t.shape() {
        [a, b] => [a, b],
        _ => panic!("expected rank-2 tensor, got {:?}", t.shape()),
    }
}
