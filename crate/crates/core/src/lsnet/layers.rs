//! Primitive layers with hand-written backward passes.
//!
//! Each layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients into its [`Param`]s during `backward`.

use rand::Rng as _;

use super::param::{join, Module, Param};
use crate::rng::Rng;
use crate::tensor::{matmul, matmul_at, matmul_bt, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Dense 2-D convolution, square kernel, symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    in_shape: [usize; 4],
    /// im2col columns per sample, or the raw input for pointwise convs.
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            weight: Param::trunc_normal(&[cout, cin, kernel, kernel], fan_in, 2f64.sqrt(), rng),
            bias: bias.then(|| Param::zeros(&[cout])),
            cache: None,
        }
    }

    /// Fully-connected layer expressed as a 1×1 convolution on `N×C×1×1`.
    pub fn linear(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let mut l = Self::new(cin, cout, 1, 1, true, rng);
        l.weight = Param::trunc_normal(&[cout, cin, 1, 1], cin, 1.0, rng);
        l
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (ho, wo) = self.out_hw(h, w);
        (self.cout * self.cin * self.kernel * self.kernel * ho * wo) as u64
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let k = self.kernel;
        let hw_o = ho * wo;
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * hw_o..(row + 1) * hw_o];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let drow = &mut dst[oh * wo..(oh + 1) * wo];
                        if ih < 0 || ih >= h as isize {
                            drow.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, d) in drow.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            *d = if iw < 0 || iw >= w as isize {
                                T::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let k = self.kernel;
        let hw_o = ho * wo;
        for c in 0..self.cin {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * hw_o..(row + 1) * hw_o];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        for ow in 0..wo {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                drow[iw as usize] = drow[iw as usize] + src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.cin, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros([n, self.cout, ho, wo]);
        let kk = self.cin * self.kernel * self.kernel;
        let hw_o = ho * wo;
        let cols = if h * w == 1 && self.is_pointwise() {
            // batched matmul: Y (n×cout) = X (n×cin) @ W^T
            matmul_bt(
                n,
                self.cin,
                self.cout,
                x.data(),
                &self.weight.value,
                T::zero(),
                y.data_mut(),
            );
            x.data().to_vec()
        } else if self.is_pointwise() {
            for s in 0..n {
                matmul(
                    self.cout,
                    self.cin,
                    hw_o,
                    &self.weight.value,
                    x.sample(s),
                    T::zero(),
                    y.sample_mut(s),
                );
            }
            x.data().to_vec()
        } else {
            let mut cols = vec![T::zero(); n * kk * hw_o];
            for s in 0..n {
                let col = &mut cols[s * kk * hw_o..(s + 1) * kk * hw_o];
                self.im2col(x.sample(s), h, w, ho, wo, col);
                matmul(self.cout, kk, hw_o, &self.weight.value, col, T::zero(), y.sample_mut(s));
            }
            cols
        };
        if let Some(b) = &self.bias {
            for s in 0..n {
                for (co, chunk) in y.sample_mut(s).chunks_mut(hw_o).enumerate() {
                    let bv = b.value[co];
                    chunk.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        self.cache = Some(ConvCache {
            in_shape: x.shape(),
            cols,
        });
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("conv backward without forward");
        let [n, _, h, w] = cache.in_shape;
        let (ho, wo) = self.out_hw(h, w);
        let hw_o = ho * wo;
        let kk = self.cin * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(cache.in_shape);
        if let Some(b) = &mut self.bias {
            for s in 0..n {
                for (co, chunk) in gy.sample(s).chunks(hw_o).enumerate() {
                    b.grad[co] = b.grad[co] + chunk.iter().copied().sum::<T>();
                }
            }
        }
        if h * w == 1 && self.is_pointwise() {
            // dW (cout×cin) += dY^T (cout×n) @ X (n×cin)
            matmul_at(
                self.cout,
                n,
                self.cin,
                gy.data(),
                &cache.cols,
                T::one(),
                &mut self.weight.grad,
            );
            // dX (n×cin) = dY (n×cout) @ W (cout×cin)
            matmul(
                n,
                self.cout,
                self.cin,
                gy.data(),
                &self.weight.value,
                T::zero(),
                dx.data_mut(),
            );
        } else if self.is_pointwise() {
            let plane = h * w;
            for s in 0..n {
                let xs = &cache.cols[s * self.cin * plane..(s + 1) * self.cin * plane];
                matmul_bt(
                    self.cout,
                    hw_o,
                    self.cin,
                    gy.sample(s),
                    xs,
                    T::one(),
                    &mut self.weight.grad,
                );
                matmul_at(
                    self.cin,
                    self.cout,
                    hw_o,
                    &self.weight.value,
                    gy.sample(s),
                    T::zero(),
                    dx.sample_mut(s),
                );
            }
        } else {
            let mut dcols = vec![T::zero(); kk * hw_o];
            for s in 0..n {
                let col = &cache.cols[s * kk * hw_o..(s + 1) * kk * hw_o];
                matmul_bt(self.cout, hw_o, kk, gy.sample(s), col, T::one(), &mut self.weight.grad);
                matmul_at(
                    kk,
                    self.cout,
                    hw_o,
                    &self.weight.value,
                    gy.sample(s),
                    T::zero(),
                    &mut dcols,
                );
                self.col2im(&dcols, h, w, ho, wo, dx.sample_mut(s));
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

/// Depthwise 3×3 convolution, stride 1, padding 1, with bias.
#[derive(Clone, Debug)]
pub struct DepthwiseConv3<T> {
    pub channels: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> DepthwiseConv3<T> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        DepthwiseConv3 {
            channels,
            weight: Param::trunc_normal(&[channels, 1, 3, 3], 9, 2f64.sqrt(), rng),
            bias: Param::zeros(&[channels]),
            cache: None,
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.channels * 9 * h * w) as u64
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "depthwise channels");
        let mut y = Tensor::zeros(x.shape());
        let plane = h * w;
        for s in 0..n {
            let xs = x.sample(s);
            let ys = y.sample_mut(s);
            for ch in 0..c {
                let k = &self.weight.value[ch * 9..ch * 9 + 9];
                let xp = &xs[ch * plane..(ch + 1) * plane];
                let yp = &mut ys[ch * plane..(ch + 1) * plane];
                let b = self.bias.value[ch];
                yp.iter_mut().for_each(|v| *v = b);
                for ki in 0..3 {
                    for kj in 0..3 {
                        let kv = k[ki * 3 + kj];
                        let di = ki as isize - 1;
                        let dj = kj as isize - 1;
                        let i0 = (-di).max(0) as usize;
                        let i1 = (h as isize - di).min(h as isize) as usize;
                        let j0 = (-dj).max(0) as usize;
                        let j1 = (w as isize - dj).min(w as isize) as usize;
                        for i in i0..i1 {
                            let si = (i as isize + di) as usize;
                            let yrow = &mut yp[i * w + j0..i * w + j1];
                            let xrow = &xp[si * w + (j0 as isize + dj) as usize..si * w + (j1 as isize + dj) as usize];
                            for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                                *yv = *yv + kv * xv;
                            }
                        }
                    }
                }
            }
        }
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("depthwise backward without forward");
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..n {
            let xs = x.sample(s);
            let gs = gy.sample(s);
            let dxs = dx.sample_mut(s);
            for ch in 0..c {
                let xp = &xs[ch * plane..(ch + 1) * plane];
                let gp = &gs[ch * plane..(ch + 1) * plane];
                let dp = &mut dxs[ch * plane..(ch + 1) * plane];
                self.bias.grad[ch] = self.bias.grad[ch] + gp.iter().copied().sum::<T>();
                for ki in 0..3 {
                    for kj in 0..3 {
                        let kv = self.weight.value[ch * 9 + ki * 3 + kj];
                        let di = ki as isize - 1;
                        let dj = kj as isize - 1;
                        let i0 = (-di).max(0) as usize;
                        let i1 = (h as isize - di).min(h as isize) as usize;
                        let j0 = (-dj).max(0) as usize;
                        let j1 = (w as isize - dj).min(w as isize) as usize;
                        let mut acc = T::zero();
                        for i in i0..i1 {
                            let si = (i as isize + di) as usize;
                            let lo = si * w + (j0 as isize + dj) as usize;
                            let hi = si * w + (j1 as isize + dj) as usize;
                            let grow = &gp[i * w + j0..i * w + j1];
                            let xrow = &xp[lo..hi];
                            let drow = &mut dp[lo..hi];
                            for ((&g, &xv), d) in grow.iter().zip(xrow).zip(drow.iter_mut()) {
                                acc = acc + g * xv;
                                *d = *d + g * kv;
                            }
                        }
                        let gi = ch * 9 + ki * 3 + kj;
                        self.weight.grad[gi] = self.weight.grad[gi] + acc;
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for DepthwiseConv3<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

pub const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Shared backward for a normalized group of `m` elements:
/// `dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))`.
fn norm_group_backward<T: Scalar>(dxhat: &[T], xhat: &[T], inv_std: T, dx: &mut [T]) {
    let m = T::lit(dxhat.len() as f64);
    let sum: T = dxhat.iter().copied().sum();
    let dot: T = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
    for ((d, &g), &xh) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d = inv_std / m * (m * g - sum - xh * dot);
    }
}

/// Batch normalization over (N, H, W) per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(&[channels], T::zero()),
            running_var: Param::buffer(&[channels], T::one()),
            cache: None,
        }
    }

    #[allow(clippy::needless_range_loop)]
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batchnorm channels");
        let plane = h * w;
        let m = (n * plane) as f64;
        let eps = T::lit(NORM_EPS);
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_stds = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += x.sample(s)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0;
                    for s in 0..n {
                        sq += x.sample(s)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / m;
                    let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    let rm = &mut self.running_mean.value[ch];
                    *rm = T::lit((1.0 - BN_MOMENTUM) * rm.as_f64() + BN_MOMENTUM * mean);
                    let rv = &mut self.running_var.value[ch];
                    *rv = T::lit((1.0 - BN_MOMENTUM) * rv.as_f64() + BN_MOMENTUM * unbiased);
                    (T::lit(mean), T::lit(var))
                }
                Mode::Eval => (self.running_mean.value[ch], self.running_var.value[ch]),
            };
            let inv_std = T::one() / (var + eps).sqrt();
            inv_stds[ch] = inv_std;
            let g = self.gamma.value[ch];
            let b = self.beta.value[ch];
            for s in 0..n {
                let off = s * c * plane + ch * plane;
                let xs = &x.data()[off..off + plane];
                let xh = &mut xhat.data_mut()[off..off + plane];
                for (d, &v) in xh.iter_mut().zip(xs) {
                    *d = (v - mean) * inv_std;
                }
                let ys = &mut y.data_mut()[off..off + plane];
                for (d, &v) in ys.iter_mut().zip(&xhat.data()[off..off + plane]) {
                    *d = g * v + b;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std: inv_stds,
            mode,
        });
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let [n, c, h, w] = gy.shape();
        let plane = h * w;
        let mut dx = Tensor::zeros(gy.shape());
        let mut dxhat = vec![T::zero(); n * plane];
        let mut xh = vec![T::zero(); n * plane];
        let mut dxg = vec![T::zero(); n * plane];
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let mut dg = T::zero();
            let mut db = T::zero();
            for s in 0..n {
                let off = s * c * plane + ch * plane;
                let gs = &gy.data()[off..off + plane];
                let xs = &cache.xhat.data()[off..off + plane];
                for (i, (&gv, &xv)) in gs.iter().zip(xs).enumerate() {
                    dg = dg + gv * xv;
                    db = db + gv;
                    dxhat[s * plane + i] = gv * g;
                    xh[s * plane + i] = xv;
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + dg;
            self.beta.grad[ch] = self.beta.grad[ch] + db;
            match cache.mode {
                Mode::Train => norm_group_backward(&dxhat, &xh, cache.inv_std[ch], &mut dxg),
                Mode::Eval => {
                    for (d, &v) in dxg.iter_mut().zip(&dxhat) {
                        *d = v * cache.inv_std[ch];
                    }
                }
            }
            for s in 0..n {
                let off = s * c * plane + ch * plane;
                dx.data_mut()[off..off + plane].copy_from_slice(&dxg[s * plane..(s + 1) * plane]);
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        f(join(prefix, "weight"), &self.gamma);
        f(join(prefix, "bias"), &self.beta);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.gamma);
        f(join(prefix, "bias"), &mut self.beta);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Group normalization with a per-channel affine; statistics are per
/// sample, so train and eval behave identically.
#[derive(Clone, Debug)]
pub struct GroupNorm<T> {
    pub channels: usize,
    pub groups: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(
            groups > 0 && channels.is_multiple_of(groups),
            "channels must divide into groups"
        );
        GroupNorm {
            channels,
            groups,
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::zeros(&[channels]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let cpg = c / self.groups;
        let glen = cpg * plane;
        let eps = NORM_EPS;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv = vec![T::zero(); n * self.groups];
        for s in 0..n {
            for g in 0..self.groups {
                let off = s * c * plane + g * glen;
                let xs = &x.data()[off..off + glen];
                let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / glen as f64;
                let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / glen as f64;
                let inv_std = T::lit(1.0 / (var + eps).sqrt());
                let mean = T::lit(mean);
                inv[s * self.groups + g] = inv_std;
                for (i, &v) in xs.iter().enumerate() {
                    let ch = g * cpg + i / plane;
                    let xh = (v - mean) * inv_std;
                    xhat.data_mut()[off + i] = xh;
                    y.data_mut()[off + i] = self.gamma.value[ch] * xh + self.beta.value[ch];
                }
            }
        }
        self.cache = Some((xhat, inv));
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv) = self.cache.take().expect("groupnorm backward without forward");
        let [n, c, h, w] = gy.shape();
        let plane = h * w;
        let cpg = c / self.groups;
        let glen = cpg * plane;
        let mut dx = Tensor::zeros(gy.shape());
        let mut dxhat = vec![T::zero(); glen];
        for s in 0..n {
            for g in 0..self.groups {
                let off = s * c * plane + g * glen;
                let gs = &gy.data()[off..off + glen];
                let xs = &xhat.data()[off..off + glen];
                for (i, (&gv, &xv)) in gs.iter().zip(xs).enumerate() {
                    let ch = g * cpg + i / plane;
                    self.gamma.grad[ch] = self.gamma.grad[ch] + gv * xv;
                    self.beta.grad[ch] = self.beta.grad[ch] + gv;
                    dxhat[i] = gv * self.gamma.value[ch];
                }
                norm_group_backward(
                    &dxhat,
                    xs,
                    inv[s * self.groups + g],
                    &mut dx.data_mut()[off..off + glen],
                );
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for GroupNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        f(join(prefix, "weight"), &self.gamma);
        f(join(prefix, "bias"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.gamma);
        f(join(prefix, "bias"), &mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Exact (erf-based) GELU.
#[derive(Clone, Debug, Default)]
pub struct Gelu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Gelu<T> {
    pub fn new() -> Self {
        Gelu { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(x.clone());
        x.map(gelu)
    }

    pub fn forward_owned(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = x.map(gelu);
        self.cache = Some(x);
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("gelu backward without forward");
        let mut dx = gy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            *d = *d * gelu_grad(v);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Drop-path
// ---------------------------------------------------------------------------

/// Per-sample stochastic depth: in train mode each sample's residual branch
/// is kept with probability `1 - rate` and rescaled by `1 / (1 - rate)`.
#[derive(Clone, Debug)]
pub struct DropPath<T> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> DropPath<T> {
    pub fn new(rate: f64) -> Self {
        DropPath { rate, mask: None }
    }

    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode, rng: &mut Rng) -> Tensor<T> {
        if mode == Mode::Eval || self.rate <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = x.batch();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if keep > 0.0 && rng.random::<f64>() < keep {
                    T::lit(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        for (s, &m) in mask.iter().enumerate() {
            x.sample_mut(s).iter_mut().for_each(|v| *v = *v * m);
        }
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut gy: Tensor<T>) -> Tensor<T> {
        if let Some(mask) = self.mask.take() {
            for (s, &m) in mask.iter().enumerate() {
                gy.sample_mut(s).iter_mut().for_each(|v| *v = *v * m);
            }
        }
        gy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rng::rng(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    /// Direct-loop convolution oracle.
    fn naive_conv(c: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [n, cin, h, w] = x.shape();
        let (ho, wo) = c.out_hw(h, w);
        let k = c.kernel;
        let mut y = Tensor::zeros([n, c.cout, ho, wo]);
        for s in 0..n {
            for co in 0..c.cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = c.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (oh * c.stride + ki) as isize - c.pad as isize;
                                    let iw = (ow * c.stride + kj) as isize - c.pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                        acc += c.weight.value[((co * cin + ci) * k + ki) * k + kj]
                                            * x.data()[((s * cin + ci) * h + ih as usize) * w + iw as usize];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((s * c.cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn strided_conv_matches_direct_loops() {
        let mut r = rng::rng(1);
        let mut c = Conv2d::<f64>::new(3, 4, 3, 2, true, &mut r);
        c.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3, 0.0];
        let x = rand_tensor([2, 3, 7, 6], 2);
        let want = naive_conv(&c, &x);
        let got = c.forward(&x);
        assert_eq!(got.shape(), [2, 4, 4, 3]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_matches_grouped_direct_loops() {
        let mut r = rng::rng(3);
        let mut dw = DepthwiseConv3::<f64>::new(2, &mut r);
        dw.bias.value = vec![0.5, -0.5];
        let x = rand_tensor([1, 2, 5, 4], 4);
        let y = dw.forward(&x);
        for ch in 0..2 {
            let mut single = Conv2d::<f64>::new(1, 1, 3, 1, true, &mut r);
            single.weight.value = dw.weight.value[ch * 9..ch * 9 + 9].to_vec();
            single.bias.as_mut().unwrap().value = vec![dw.bias.value[ch]];
            let xc = Tensor::from_vec([1, 1, 5, 4], x.data()[ch * 20..ch * 20 + 20].to_vec()).unwrap();
            let want = naive_conv(&single, &xc);
            for (a, b) in y.data()[ch * 20..ch * 20 + 20].iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = rand_tensor([4, 2, 3, 3], 5).map(|v| 3.0 * v + 1.0);
        let y = bn.forward(&x, Mode::Train);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|s| y.sample(s)[ch * 9..ch * 9 + 9].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn droppath_rate_one_drops_everything_and_eval_is_identity() {
        let mut r = rng::rng(0);
        let x = rand_tensor([3, 2, 2, 2], 9);
        let mut dp = DropPath::<f64>::new(1.0);
        let y = dp.forward(x.clone(), Mode::Train, &mut r);
        assert!(y.data().iter().all(|&v| v == 0.0));
        let mut dp = DropPath::<f64>::new(0.5);
        assert_eq!(dp.forward(x.clone(), Mode::Eval, &mut r), x);
    }
}
