//! Mini-batch SGD on the class-anchor loss, shared by centralized training
//! and federated clients.
//!
//! Epoch `e` of a training stream with seed `s` shuffles with
//! `derive(s, [EPOCH, e])`; drop-path draws come from the same stream. Two
//! runs that walk the same epochs with the same stream are bit-identical.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::caloss::{ca_loss_batch, make_centers, predict_with, ClassCenters, OpenSetDecision, ScoreKind};
use crate::lsnet::{LsNet, Mode, Module};
use crate::rng::{self, tag};
use crate::specgram::{Spectrogram, SPEC_SIZE};
use crate::{Error, Result, Tensor};

/// Images with integer labels, stored contiguously (`N × C × 128 × 128`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageSet {
    pub channels: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub snrs: Vec<f64>,
}

impl ImageSet {
    /// Keep spectrograms whose label maps to `Some(index)`.
    pub fn from_spectrograms<'a>(
        specs: impl IntoIterator<Item = &'a Spectrogram>,
        label_of: impl Fn(&Spectrogram) -> Option<usize>,
    ) -> Self {
        let mut set = ImageSet::default();
        for s in specs {
            if let Some(y) = label_of(s) {
                set.channels = s.channels;
                set.images.extend_from_slice(&s.values);
                set.labels.push(y);
                set.snrs.push(s.snr_db.unwrap_or(f64::NAN));
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.channels * SPEC_SIZE * SPEC_SIZE
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.stride()..(i + 1) * self.stride()]
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec([indices.len(), self.channels, SPEC_SIZE, SPEC_SIZE], data).expect("stride matches shape")
    }

    /// Subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        let mut out = ImageSet {
            channels: self.channels,
            ..ImageSet::default()
        };
        for &i in indices {
            out.images.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
            out.snrs.push(self.snrs[i]);
        }
        out
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · (1 + cos(π·e/epochs)) / 2` for epoch index `e`.
    Cosine,
}

impl LrSchedule {
    pub fn lr_at(self, base: f64, epoch: usize, horizon: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (epoch as f64 / horizon.max(1) as f64).min(1.0);
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            schedule: LrSchedule::Constant,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 50,
            alpha: crate::caloss::DEFAULT_ALPHA,
            lambda: crate::caloss::DEFAULT_LAMBDA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("alpha must be > 0 and lambda >= 0".into()));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay on trainable arrays.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, model: &mut LsNet<f32>, cfg: &TrainConfig, lr: f64) {
        let lr = lr as f32;
        let mu = cfg.momentum as f32;
        let wd = cfg.weight_decay as f32;
        let mut i = 0;
        let velocity = &mut self.velocity;
        model.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if velocity.len() <= i {
                velocity.push(vec![0.0; p.value.len()]);
            }
            let v = &mut velocity[i];
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let d = *g + wd * *w;
                *vel = mu * *vel + d;
                *w -= lr * *vel;
            }
            i += 1;
        });
    }
}

/// Run epochs `first_epoch .. first_epoch + epochs` of the stream `seed`;
/// returns the mean loss of each epoch. The schedule horizon is
/// `cfg.epochs`, independent of how many epochs this call runs.
pub fn train_epochs(
    model: &mut LsNet<f32>,
    opt: &mut Sgd,
    data: &ImageSet,
    cfg: &TrainConfig,
    seed: u64,
    first_epoch: usize,
    epochs: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("no training samples".into()));
    }
    let k = model.num_classes();
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= k) {
        return Err(Error::Validation(format!("label {bad} outside the {k}-way head")));
    }
    let centers = make_centers(k, cfg.alpha)?;
    model.set_mode(Mode::Train);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in first_epoch..first_epoch + epochs {
        let mut r = rng::rng(rng::derive(seed, &[tag::EPOCH, epoch as u64]));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut r);
        let lr = cfg.schedule.lr_at(cfg.lr, epoch, cfg.epochs);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            // a single-sample tail batch has no batch statistics to normalize with
            if idx.len() < 2 && data.len() >= 2 {
                continue;
            }
            let x = data.batch(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            model.zero_grad();
            let logits = model.forward(&x, &mut r)?;
            let z: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
            let (loss, grad) = ca_loss_batch(&z, &labels, &centers, cfg.lambda)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            let g = Tensor::from_vec(logits.shape(), grad.iter().map(|&v| v as f32).collect())?;
            model.backward(&g);
            opt.step(model, cfg, lr);
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        let mean = total / seen.max(1) as f64;
        log::debug!("epoch {}: loss {mean:.5}", epoch + 1);
        losses.push(mean);
    }
    model.set_mode(Mode::Eval);
    Ok(losses)
}

/// Eval-mode logits for every image, as rows of `f64`.
pub fn predict_logits(model: &mut LsNet<f32>, data: &ImageSet, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let mut r = rng::rng(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = model.forward(&data.batch(chunk), &mut r)?;
        let k = logits.channels();
        out.extend(
            logits
                .data()
                .chunks(k)
                .map(|row| row.iter().map(|&v| v as f64).collect::<Vec<_>>()),
        );
    }
    model.set_mode(prev);
    Ok(out)
}

pub fn decide(
    logits: &[Vec<f64>],
    centers: &ClassCenters,
    threshold: Option<f64>,
    kind: ScoreKind,
) -> Result<Vec<OpenSetDecision>> {
    logits
        .iter()
        .map(|z| predict_with(z, centers, threshold, kind))
        .collect()
}
