//! Composite blocks: stem, MCAC residual block and the strided transition.

use super::layers::{BatchNorm2d, Conv2d, DepthwiseConv3, DropPath, Gelu, GroupNorm, Mode};
use super::mca::Mca;
use super::param::{join, Module, Param};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

pub const STEM_GROUPS: usize = 4;

/// Depthwise 3×3 + pointwise 1×1, then group norm and GELU.
#[derive(Clone, Debug)]
pub struct SeparableUnit<T> {
    pub dw: DepthwiseConv3<T>,
    pub pw: Conv2d<T>,
    pub norm: GroupNorm<T>,
    act: Gelu<T>,
}

impl<T: Scalar> SeparableUnit<T> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        let groups = if channels.is_multiple_of(STEM_GROUPS) {
            STEM_GROUPS
        } else {
            1
        };
        SeparableUnit {
            dw: DepthwiseConv3::new(channels, rng),
            pw: Conv2d::new(channels, channels, 1, 1, true, rng),
            norm: GroupNorm::new(channels, groups),
            act: Gelu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.dw.forward(x);
        let y = self.pw.forward(&y);
        let y = self.norm.forward(&y);
        self.act.forward_owned(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let g = self.act.backward(g);
        let g = self.norm.backward(&g);
        let g = self.pw.backward(&g);
        self.dw.backward(&g)
    }
}

impl<T: Scalar> Module<T> for SeparableUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.dw.visit(&join(prefix, "dw"), f);
        self.pw.visit(&join(prefix, "pw"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.pw.visit_mut(&join(prefix, "pw"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Stride-2 3×3 convolution followed by two separable units; halves H and W.
#[derive(Clone, Debug)]
pub struct Stem<T> {
    pub conv: Conv2d<T>,
    pub units: [SeparableUnit<T>; 2],
}

impl<T: Scalar> Stem<T> {
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let conv = Conv2d::new(cin, cout, 3, 2, true, rng);
        let a = SeparableUnit::new(cout, rng);
        let b = SeparableUnit::new(cout, rng);
        Stem { conv, units: [a, b] }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv.forward(x);
        let y = self.units[0].forward(&y);
        self.units[1].forward(&y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let g = self.units[1].backward(g);
        let g = self.units[0].backward(&g);
        self.conv.backward(&g)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (ho, wo) = self.conv.out_hw(h, w);
        self.conv.macs(h, w)
            + self
                .units
                .iter()
                .map(|u| u.dw.macs(ho, wo) + u.pw.macs(ho, wo))
                .sum::<u64>()
    }
}

impl<T: Scalar> Module<T> for Stem<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.units[0].visit(&join(prefix, "unit0"), f);
        self.units[1].visit(&join(prefix, "unit1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.units[0].visit_mut(&join(prefix, "unit0"), f);
        self.units[1].visit_mut(&join(prefix, "unit1"), f);
    }
}

/// Stage transition: 3×3 stride-2 convolution + batch norm, no activation.
#[derive(Clone, Debug)]
pub struct Downsample<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> Downsample<T> {
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        Downsample {
            conv: Conv2d::new(cin, cout, 3, 2, false, rng),
            bn: BatchNorm2d::new(cout),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.conv.forward(x);
        self.bn.forward(&y, mode)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let g = self.bn.backward(g);
        self.conv.backward(&g)
    }
}

impl<T: Scalar> Module<T> for Downsample<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// `x + DropPath(pw2(GELU(pw1(BN(MCA(DW(x)))))))`.
#[derive(Clone, Debug)]
pub struct McacBlock<T> {
    pub channels: usize,
    pub dw: DepthwiseConv3<T>,
    pub mca: Mca<T>,
    pub bn: BatchNorm2d<T>,
    pub expand: Conv2d<T>,
    act: Gelu<T>,
    pub project: Conv2d<T>,
    pub drop_path: DropPath<T>,
}

impl<T: Scalar> McacBlock<T> {
    pub fn new(channels: usize, expansion: usize, drop_rate: f64, rng: &mut Rng) -> Self {
        let dw = DepthwiseConv3::new(channels, rng);
        let mca = Mca::new(channels, rng);
        let expand = Conv2d::new(channels, channels * expansion, 1, 1, true, rng);
        let mut project = Conv2d::new(channels * expansion, channels, 1, 1, true, rng);
        // blocks start as the identity
        project.weight.value.iter_mut().for_each(|v| *v = T::zero());
        McacBlock {
            channels,
            dw,
            mca,
            bn: BatchNorm2d::new(channels),
            expand,
            act: Gelu::new(),
            project,
            drop_path: DropPath::new(drop_rate),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if x.channels() != self.channels {
            return Err(crate::Error::shape(self.channels, x.channels()));
        }
        let y = self.dw.forward(x);
        let y = self.mca.forward(&y, mode)?;
        let y = self.bn.forward(&y, mode);
        let y = self.expand.forward(&y);
        let y = self.act.forward_owned(y);
        let y = self.project.forward(&y);
        let mut y = self.drop_path.forward(y, mode, rng);
        y.add_assign(x);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let gb = self.drop_path.backward(g.clone());
        let gb = self.project.backward(&gb);
        let gb = self.act.backward(&gb);
        let gb = self.expand.backward(&gb);
        let gb = self.bn.backward(&gb);
        let gb = self.mca.backward(&gb);
        let mut gx = self.dw.backward(&gb);
        gx.add_assign(g);
        gx
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.dw.macs(h, w) + self.mca.macs(h, w) + self.expand.macs(h, w) + self.project.macs(h, w)
    }
}

impl<T: Scalar> Module<T> for McacBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.dw.visit(&join(prefix, "dw"), f);
        self.mca.visit(&join(prefix, "mca"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.expand.visit(&join(prefix, "expand"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.mca.visit_mut(&join(prefix, "mca"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}
