//! Multi-channel attention.
//!
//! Three gates are computed from pooled views of `x` (C×H×W):
//!
//! * spatial `A_s` (1×H×W): max + mean over channels → BN → sigmoid;
//! * height `A_h` (C×1×1): max + mean over H, averaged over W → 1×1 conv → BN → sigmoid;
//! * width `A_w` (C×1×1): max + mean over W, averaged over H → 1×1 conv → BN → sigmoid.
//!
//! The output is `x + x ⊙ (A_s + A_h + A_w)`, so the gate lies in (0, 3).

use super::layers::{sigmoid, BatchNorm2d, Conv2d, Mode};
use super::param::{join, Module, Param};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Mca<T> {
    pub channels: usize,
    pub spatial_bn: BatchNorm2d<T>,
    pub height_conv: Conv2d<T>,
    pub height_bn: BatchNorm2d<T>,
    pub width_conv: Conv2d<T>,
    pub width_bn: BatchNorm2d<T>,
    cache: Option<McaCache<T>>,
}

#[derive(Clone, Debug)]
struct McaCache<T> {
    x: Tensor<T>,
    /// argmax channel per (n, h, w)
    spatial_arg: Vec<u32>,
    /// argmax row per (n, c, w)
    height_arg: Vec<u32>,
    /// argmax column per (n, c, h)
    width_arg: Vec<u32>,
    a_s: Tensor<T>,
    a_h: Tensor<T>,
    a_w: Tensor<T>,
}

/// Gate tensors, exposed for inspection and tests.
pub struct McaGates<T> {
    pub spatial: Tensor<T>,
    pub height: Tensor<T>,
    pub width: Tensor<T>,
}

fn argmax<T: Scalar>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_infinity());
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

impl<T: Scalar> Mca<T> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Mca {
            channels,
            spatial_bn: BatchNorm2d::new(1),
            height_conv: Conv2d::new(channels, channels, 1, 1, false, rng),
            height_bn: BatchNorm2d::new(channels),
            width_conv: Conv2d::new(channels, channels, 1, 1, false, rng),
            width_bn: BatchNorm2d::new(channels),
            cache: None,
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        // pooling + two channel mixes + gating
        (2 * self.channels * self.channels + 4 * self.channels * h * w) as u64
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if h != w {
            return Err(Error::shape("square feature map", format!("{h}x{w}")));
        }
        if c != self.channels {
            return Err(Error::shape(self.channels, c));
        }
        Ok(())
    }

    pub fn gates(&mut self, x: &Tensor<T>, mode: Mode) -> Result<McaGates<T>> {
        self.forward(x, mode)?;
        let c = self.cache.as_ref().expect("cache after forward");
        Ok(McaGates {
            spatial: c.a_s.clone(),
            height: c.a_h.clone(),
            width: c.a_w.clone(),
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let inv_c = T::lit(1.0 / c as f64);
        let inv_h = T::lit(1.0 / h as f64);
        let inv_w = T::lit(1.0 / w as f64);

        // spatial descriptor (N×1×H×W)
        let mut s_desc = Tensor::zeros([n, 1, h, w]);
        let mut spatial_arg = vec![0u32; n * plane];
        for s in 0..n {
            let xs = x.sample(s);
            for p in 0..plane {
                let (am, mx) = argmax((0..c).map(|ch| xs[ch * plane + p]));
                let mean = (0..c).map(|ch| xs[ch * plane + p]).sum::<T>() * inv_c;
                s_desc.data_mut()[s * plane + p] = mx + mean;
                spatial_arg[s * plane + p] = am as u32;
            }
        }

        // height / width descriptors (N×C×1×1)
        let mut h_desc = Tensor::zeros([n, c, 1, 1]);
        let mut w_desc = Tensor::zeros([n, c, 1, 1]);
        let mut height_arg = vec![0u32; n * c * w];
        let mut width_arg = vec![0u32; n * c * h];
        for s in 0..n {
            let xs = x.sample(s);
            for ch in 0..c {
                let pl = &xs[ch * plane..(ch + 1) * plane];
                let mut hacc = T::zero();
                for j in 0..w {
                    let (am, mx) = argmax((0..h).map(|i| pl[i * w + j]));
                    let mean = (0..h).map(|i| pl[i * w + j]).sum::<T>() * inv_h;
                    height_arg[(s * c + ch) * w + j] = am as u32;
                    hacc = hacc + mx + mean;
                }
                h_desc.data_mut()[s * c + ch] = hacc * inv_w;
                let mut wacc = T::zero();
                for i in 0..h {
                    let row = &pl[i * w..(i + 1) * w];
                    let (am, mx) = argmax(row.iter().copied());
                    let mean = row.iter().copied().sum::<T>() * inv_w;
                    width_arg[(s * c + ch) * h + i] = am as u32;
                    wacc = wacc + mx + mean;
                }
                w_desc.data_mut()[s * c + ch] = wacc * inv_h;
            }
        }

        let a_s = self.spatial_bn.forward(&s_desc, mode).map(sigmoid);
        let hz = self.height_conv.forward(&h_desc);
        let a_h = self.height_bn.forward(&hz, mode).map(sigmoid);
        let wz = self.width_conv.forward(&w_desc);
        let a_w = self.width_bn.forward(&wz, mode).map(sigmoid);

        let mut y = Tensor::zeros(x.shape());
        for s in 0..n {
            let xs = x.sample(s);
            let ys = y.sample_mut(s);
            let asp = &a_s.data()[s * plane..(s + 1) * plane];
            for ch in 0..c {
                let chan = a_h.data()[s * c + ch] + a_w.data()[s * c + ch];
                for p in 0..plane {
                    let v = xs[ch * plane + p];
                    ys[ch * plane + p] = v + v * (asp[p] + chan);
                }
            }
        }

        self.cache = Some(McaCache {
            x: x.clone(),
            spatial_arg,
            height_arg,
            width_arg,
            a_s,
            a_h,
            a_w,
        });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("mca backward without forward");
        let x = &cache.x;
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let inv_c = T::lit(1.0 / c as f64);
        let inv_h = T::lit(1.0 / h as f64);
        let inv_w = T::lit(1.0 / w as f64);

        let mut dx = Tensor::zeros(x.shape());
        let mut d_as = Tensor::zeros([n, 1, h, w]);
        let mut d_ah = Tensor::zeros([n, c, 1, 1]);
        let mut d_aw = Tensor::zeros([n, c, 1, 1]);
        for s in 0..n {
            let xs = x.sample(s);
            let gs = gy.sample(s);
            let asp = &cache.a_s.data()[s * plane..(s + 1) * plane];
            for ch in 0..c {
                let chan = cache.a_h.data()[s * c + ch] + cache.a_w.data()[s * c + ch];
                let mut dchan = T::zero();
                for p in 0..plane {
                    let g = gs[ch * plane + p];
                    let v = xs[ch * plane + p];
                    dx.data_mut()[(s * c + ch) * plane + p] = g * (T::one() + asp[p] + chan);
                    let dg = g * v;
                    d_as.data_mut()[s * plane + p] = d_as.data()[s * plane + p] + dg;
                    dchan = dchan + dg;
                }
                d_ah.data_mut()[s * c + ch] = dchan;
                d_aw.data_mut()[s * c + ch] = dchan;
            }
        }

        // through sigmoids
        let sig_back = |d: &mut Tensor<T>, a: &Tensor<T>| {
            for (dv, &av) in d.data_mut().iter_mut().zip(a.data()) {
                *dv = *dv * av * (T::one() - av);
            }
        };
        sig_back(&mut d_as, &cache.a_s);
        sig_back(&mut d_ah, &cache.a_h);
        sig_back(&mut d_aw, &cache.a_w);

        let d_sdesc = self.spatial_bn.backward(&d_as);
        let d_hdesc = self.height_conv.backward(&self.height_bn.backward(&d_ah));
        let d_wdesc = self.width_conv.backward(&self.width_bn.backward(&d_aw));

        for s in 0..n {
            let dxs = dx.sample_mut(s);
            for p in 0..plane {
                let g = d_sdesc.data()[s * plane + p];
                let am = cache.spatial_arg[s * plane + p] as usize;
                dxs[am * plane + p] = dxs[am * plane + p] + g;
                let gm = g * inv_c;
                for ch in 0..c {
                    dxs[ch * plane + p] = dxs[ch * plane + p] + gm;
                }
            }
            for ch in 0..c {
                let gh = d_hdesc.data()[s * c + ch] * inv_w;
                let gw = d_wdesc.data()[s * c + ch] * inv_h;
                let pl = &mut dxs[ch * plane..(ch + 1) * plane];
                let uniform = gh * inv_h + gw * inv_w;
                pl.iter_mut().for_each(|v| *v = *v + uniform);
                for j in 0..w {
                    let i = cache.height_arg[(s * c + ch) * w + j] as usize;
                    pl[i * w + j] = pl[i * w + j] + gh;
                }
                for i in 0..h {
                    let j = cache.width_arg[(s * c + ch) * h + i] as usize;
                    pl[i * w + j] = pl[i * w + j] + gw;
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Mca<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.spatial_bn.visit(&join(prefix, "spatial_bn"), f);
        self.height_conv.visit(&join(prefix, "height_conv"), f);
        self.height_bn.visit(&join(prefix, "height_bn"), f);
        self.width_conv.visit(&join(prefix, "width_conv"), f);
        self.width_bn.visit(&join(prefix, "width_bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.spatial_bn.visit_mut(&join(prefix, "spatial_bn"), f);
        self.height_conv.visit_mut(&join(prefix, "height_conv"), f);
        self.height_bn.visit_mut(&join(prefix, "height_bn"), f);
        self.width_conv.visit_mut(&join(prefix, "width_conv"), f);
        self.width_bn.visit_mut(&join(prefix, "width_bn"), f);
    }
}
