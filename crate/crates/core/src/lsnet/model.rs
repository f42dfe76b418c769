use serde::{Deserialize, Serialize};

use super::blocks::{Downsample, McacBlock, Stem};
use super::layers::{gelu, gelu_grad, Conv2d, Mode};
use super::param::{join, Module, Param, ParameterSet};
use crate::rng::{self, Rng};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const INPUT_SIZE: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsNetConfig {
    /// Channels of the three MCAC stages (the stems use the first entry).
    pub stage_channels: Vec<usize>,
    pub stage_depths: Vec<usize>,
    /// Width of the 1×1 projection after global pooling.
    pub head_width: usize,
    pub num_classes: usize,
    pub droppath_max: f64,
    pub input_channels: usize,
    pub expansion: usize,
}

impl Default for LsNetConfig {
    fn default() -> Self {
        LsNetConfig {
            stage_channels: vec![16, 32, 64],
            stage_depths: vec![3, 4, 6],
            head_width: 128,
            num_classes: 7,
            droppath_max: 0.1,
            input_channels: 1,
            expansion: 4,
        }
    }
}

impl LsNetConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        LsNetConfig {
            num_classes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.stage_depths.len() {
            return Err(Error::Config(
                "stage_channels and stage_depths must have equal, non-zero length".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.droppath_max) {
            return Err(Error::Config(format!(
                "droppath_max must be in [0, 1), got {}",
                self.droppath_max
            )));
        }
        if self.input_channels == 0 || self.expansion == 0 || self.head_width == 0 {
            return Err(Error::Config(
                "input_channels, expansion and head_width must be positive".into(),
            ));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channel counts must be positive".into()));
        }
        // two stems plus one transition per extra stage, all stride 2
        let downs = 2 + self.stage_channels.len() - 1;
        if INPUT_SIZE >> downs == 0 {
            return Err(Error::Config("too many stages for a 128×128 input".into()));
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_depths.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub down: Option<Downsample<T>>,
    pub blocks: Vec<McacBlock<T>>,
}

/// The lightweight spectrogram network.
#[derive(Clone, Debug)]
pub struct LsNet<T = f32> {
    pub config: LsNetConfig,
    pub seed: u64,
    mode: Mode,
    pub stem1: Stem<T>,
    pub stem2: Stem<T>,
    pub stages: Vec<Stage<T>>,
    pub proj: Conv2d<T>,
    pub fc: Conv2d<T>,
    gap_shape: Option<[usize; 4]>,
    proj_out: Option<Tensor<T>>,
    trace: Vec<(String, [usize; 3])>,
}

impl<T: Scalar> LsNet<T> {
    pub fn new(config: LsNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::rng(rng::derive(seed, &[rng::tag::MODEL_INIT]));
        let c0 = config.stage_channels[0];
        let stem1 = Stem::new(config.input_channels, c0, &mut r);
        let stem2 = Stem::new(c0, c0, &mut r);
        let total = config.total_blocks();
        let mut idx = 0;
        let mut stages = Vec::new();
        let mut prev = c0;
        for (si, (&ch, &depth)) in config.stage_channels.iter().zip(&config.stage_depths).enumerate() {
            let down = (si > 0).then(|| Downsample::new(prev, ch, &mut r));
            let blocks = (0..depth)
                .map(|_| {
                    let rate = if total > 1 {
                        config.droppath_max * idx as f64 / (total - 1) as f64
                    } else {
                        0.0
                    };
                    idx += 1;
                    McacBlock::new(ch, config.expansion, rate, &mut r)
                })
                .collect();
            stages.push(Stage { down, blocks });
            prev = ch;
        }
        let proj = Conv2d::new(prev, config.head_width, 1, 1, true, &mut r);
        let fc = Conv2d::linear(config.head_width, config.num_classes, &mut r);
        Ok(LsNet {
            config,
            seed,
            mode: Mode::Eval,
            stem1,
            stem2,
            stages,
            proj,
            fc,
            gap_shape: None,
            proj_out: None,
            trace: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn parameters(&self) -> ParameterSet<T> {
        ParameterSet::from_module(self)
    }

    pub fn load_parameters(&mut self, params: &ParameterSet<T>) -> Result<()> {
        params.load_into(self)
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn check_finite(t: &Tensor<T>, layer: &str) -> Result<()> {
        if t.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("activation after {layer}")))
        }
    }

    /// Logits `N×K×1×1` for a batch `N×C×128×128`.
    ///
    /// Every call caches intermediate activations so that [`Self::backward`]
    /// can follow; `rng` only drives drop-path in train mode.
    pub fn forward(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.shape();
        if c != self.config.input_channels || h != INPUT_SIZE || w != INPUT_SIZE {
            return Err(Error::shape(
                format!("N×{}×{INPUT_SIZE}×{INPUT_SIZE}", self.config.input_channels),
                format!("N×{c}×{h}×{w}"),
            ));
        }
        let mode = self.mode;
        let mut trace = Vec::new();
        let chw = |t: &Tensor<T>| {
            let [_, c, h, w] = t.shape();
            [c, h, w]
        };
        let mut y = self.stem1.forward(x);
        Self::check_finite(&y, "stem1")?;
        trace.push(("stem1".to_string(), chw(&y)));
        y = self.stem2.forward(&y);
        Self::check_finite(&y, "stem2")?;
        trace.push(("stem2".to_string(), chw(&y)));
        for (si, stage) in self.stages.iter_mut().enumerate() {
            if let Some(d) = &mut stage.down {
                y = d.forward(&y, mode);
                Self::check_finite(&y, &format!("stage{si}.down"))?;
                trace.push((format!("down{si}"), chw(&y)));
            }
            for (bi, b) in stage.blocks.iter_mut().enumerate() {
                y = b.forward(&y, mode, rng)?;
                Self::check_finite(&y, &format!("stage{si}.block{bi}"))?;
            }
            trace.push((format!("stage{}", si + 1), chw(&y)));
        }
        // global average pool
        let [n, c, h, w] = y.shape();
        let plane = (h * w) as f64;
        let mut pooled = Tensor::zeros([n, c, 1, 1]);
        for (i, v) in pooled.data_mut().iter_mut().enumerate() {
            let s = i / c;
            let ch = i % c;
            let off = (s * c + ch) * h * w;
            *v = y.data()[off..off + h * w].iter().copied().sum::<T>() / T::lit(plane);
        }
        self.gap_shape = Some(y.shape());
        trace.push(("gap".to_string(), chw(&pooled)));
        let z = self.proj.forward(&pooled);
        let a = z.map(gelu);
        trace.push(("proj".to_string(), chw(&a)));
        self.proj_out = Some(z);
        let logits = self.fc.forward(&a);
        Self::check_finite(&logits, "head")?;
        trace.push(("fc".to_string(), chw(&logits)));
        self.trace = trace;
        Ok(logits)
    }

    /// Backpropagate `dL/dlogits`; parameter gradients accumulate, the
    /// input gradient is returned.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Tensor<T> {
        let g = self.fc.backward(grad_logits);
        let z = self.proj_out.take().expect("backward without forward");
        let mut g = g;
        for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
            *gv = *gv * gelu_grad(zv);
        }
        let g = self.proj.backward(&g);
        let shape = self.gap_shape.take().expect("backward without forward");
        let [n, c, h, w] = shape;
        let plane = h * w;
        let inv = T::lit(1.0 / plane as f64);
        let mut gy = Tensor::zeros(shape);
        for s in 0..n {
            for ch in 0..c {
                let v = g.data()[s * c + ch] * inv;
                let off = (s * c + ch) * plane;
                gy.data_mut()[off..off + plane].iter_mut().for_each(|d| *d = v);
            }
        }
        for stage in self.stages.iter_mut().rev() {
            for b in stage.blocks.iter_mut().rev() {
                gy = b.backward(&gy);
            }
            if let Some(d) = &mut stage.down {
                gy = d.backward(&gy);
            }
        }
        let gy = self.stem2.backward(&gy);
        self.stem1.backward(&gy)
    }

    /// Per-layer output shapes observed during the last forward pass.
    pub fn traced_shapes(&self) -> &[(String, [usize; 3])] {
        &self.trace
    }

    /// Per-layer output shapes `(name, [C, H, W])` for a single sample.
    pub fn shape_chain(&self) -> Vec<(String, [usize; 3])> {
        let c0 = self.config.stage_channels[0];
        let mut hw = INPUT_SIZE / 2;
        let mut chain = vec![("stem1".to_string(), [c0, hw, hw])];
        hw /= 2;
        chain.push(("stem2".to_string(), [c0, hw, hw]));
        for (si, &ch) in self.config.stage_channels.iter().enumerate() {
            if si > 0 {
                hw /= 2;
                chain.push((format!("down{si}"), [ch, hw, hw]));
            }
            chain.push((format!("stage{}", si + 1), [ch, hw, hw]));
        }
        let last = *self.config.stage_channels.last().expect("validated");
        chain.push(("gap".to_string(), [last, 1, 1]));
        chain.push(("proj".to_string(), [self.config.head_width, 1, 1]));
        chain.push(("fc".to_string(), [self.config.num_classes, 1, 1]));
        chain
    }

    /// Multiply–accumulate count of one forward pass on a single sample.
    pub fn macs(&self) -> u64 {
        let mut hw = INPUT_SIZE;
        let mut total = self.stem1.macs(hw, hw);
        hw /= 2;
        total += self.stem2.macs(hw, hw);
        hw /= 2;
        for stage in &self.stages {
            if let Some(d) = &stage.down {
                total += d.conv.macs(hw, hw);
                hw /= 2;
            }
            total += stage.blocks.iter().map(|b| b.macs(hw, hw)).sum::<u64>();
        }
        total + self.proj.macs(1, 1) + self.fc.macs(1, 1)
    }

    pub fn cast<U: Scalar>(&self) -> LsNet<U> {
        let mut out = LsNet::<U>::new(self.config.clone(), self.seed).expect("config already validated");
        out.load_parameters(&self.parameters().cast())
            .expect("identical layout");
        out.mode = self.mode;
        out
    }
}

/// Sum of element counts over trainable arrays.
pub fn param_count<T: Scalar>(model: &LsNet<T>) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, p| {
        if p.trainable {
            n += p.len()
        }
    });
    n
}

impl<T: Scalar> Module<T> for LsNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        self.stem1.visit(&join(prefix, "stem1"), f);
        self.stem2.visit(&join(prefix, "stem2"), f);
        for (si, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stage{}", si + 1));
            if let Some(d) = &stage.down {
                d.visit(&join(&sp, "down"), f);
            }
            for (bi, b) in stage.blocks.iter().enumerate() {
                b.visit(&join(&sp, &format!("block{bi}")), f);
            }
        }
        self.proj.visit(&join(prefix, "proj"), f);
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.stem1.visit_mut(&join(prefix, "stem1"), f);
        self.stem2.visit_mut(&join(prefix, "stem2"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stage{}", si + 1));
            if let Some(d) = &mut stage.down {
                d.visit_mut(&join(&sp, "down"), f);
            }
            for (bi, b) in stage.blocks.iter_mut().enumerate() {
                b.visit_mut(&join(&sp, &format!("block{bi}")), f);
            }
        }
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}
