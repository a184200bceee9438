//! Group-wise training loop.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dihedral, ImageGroup};
use crate::error::{Error, Result};
use crate::imageio::{resize_bilinear, resize_rgb, GrayImage, RgbImage};
use crate::loss::bce_group_loss;
use crate::model::GlNet;
use crate::optim::{cosine_lr, AdamConfig, AdamW};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub iterations: usize,
    /// Groups per optimisation step.
    pub batch: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Random horizontal flips and quarter-turn rotations.
    pub augment: bool,
    pub seed: u64,
    /// Replace the loss of this step by NaN (exercises the abort path).
    #[serde(skip)]
    pub poison_step: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            lr_min: 1e-5,
            iterations: 1000,
            batch: 1,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            augment: true,
            seed: 0,
            poison_step: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!("need 0 <= lr_min <= lr_init, got {} and {}", self.lr_min, self.lr_init));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        Ok(())
    }

    /// Learning rate of step `t`; runs from `lr_init` at the first step to
    /// `lr_min` at the last.
    pub fn lr_at(&self, t: usize) -> f64 {
        cosine_lr(self.lr_init, self.lr_min, t, self.iterations - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// A labelled group brought to the model's resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub images: Vec<RgbImage>,
    pub masks: Vec<GrayImage>,
}

/// Resizes images (bilinear) and masks (bilinear, then thresholded at one
/// half) to `side x side`.
pub fn prepare(group: &ImageGroup, side: usize) -> Result<Sample> {
    if !group.has_masks() || group.masks.len() != group.len() {
        return Err(Error::Image { path: group.name.clone().into(), reason: "group is missing masks".into() });
    }
    let images = group.images.iter().map(|im| resize_rgb(im, side, side)).collect();
    let masks = group
        .masks
        .iter()
        .map(|m| {
            if (m.width, m.height) == (side, side) {
                return m.clone();
            }
            let up = resize_bilinear(&m.to_unit(), m.width, m.height, side, side);
            let data = up.iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
            GrayImage { width: side, height: side, data }
        })
        .collect();
    Ok(Sample { images, masks })
}

fn mask_tensor(m: &GrayImage) -> Tensor<f32> {
    let v = m.binarize(128).into_iter().map(|x| x as f32).collect();
    Tensor::new(v, &[1, m.height, m.width]).expect("consistent mask buffer")
}

/// Optimises `model` in place; `on_step` sees every loss record as it is
/// produced.
pub fn train(
    model: &GlNet<f32>,
    data: &[ImageGroup],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set contains no groups"));
    }
    let n = model.config.group_size;
    let side = model.config.side;
    if let Some(g) = data.iter().find(|g| g.len() < n) {
        return Err(Error::GroupSize {
            got: g.len(),
            reason: format!("training group {} is smaller than the model's group size {n}", g.name),
        });
    }
    let samples = data.iter().map(|g| prepare(g, side)).collect::<Result<Vec<_>>>()?;
    let params: Vec<Tensor<f32>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let mut opt = AdamW::new(
        params,
        AdamConfig { beta1: cfg.beta1, beta2: cfg.beta2, weight_decay: cfg.weight_decay, ..Default::default() },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let lr = cfg.lr_at(step);
        model.zero_grad();
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let s = &samples[rng.gen_range(0..samples.len())];
            let mut pick: Vec<usize> = if s.images.len() == n {
                (0..n).collect()
            } else {
                sample(&mut rng, s.images.len(), n).into_vec()
            };
            pick.sort_unstable();
            let mut images = Vec::with_capacity(n);
            let mut masks = Vec::with_capacity(n);
            for &i in &pick {
                let (im, m) = if cfg.augment {
                    let d = Dihedral { flip: rng.gen(), rot: rng.gen_range(0..4) };
                    d.apply_pair(&s.images[i], &s.masks[i])
                } else {
                    (s.images[i].clone(), s.masks[i].clone())
                };
                images.push(im.to_tensor::<f32>());
                masks.push(mask_tensor(&m));
            }
            let loss = model
                .forward_group(&images)
                .and_then(|maps| bce_group_loss(&maps, &masks))
                .and_then(|l| l.mul_scalar(1.0 / cfg.batch as f32));
            let loss = match loss {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { step, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            let value = if cfg.poison_step == Some(step) { f64::NAN } else { loss.item() as f64 };
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss: value });
            }
            total += value;
            match loss.backward() {
                Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { step, loss: total }),
                r => r?,
            }
        }
        opt.step(lr);
        let rec = LossRecord { step, loss: total, lr };
        on_step(&rec);
        log.push(rec);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{synth_dataset, SynthConfig};

    fn toy() -> (ModelConfig, Vec<ImageGroup>) {
        let cfg = ModelConfig { group_size: 2, side: 16, channels: 8, stride: 4, ..Default::default() };
        let data = synth_dataset(&SynthConfig { groups: 2, group_size: 3, side: 24, seed: 1 })
            .into_iter()
            .map(|(g, _)| g)
            .collect();
        (cfg, data)
    }

    #[test]
    fn deterministic_and_schedule_endpoints() {
        let (mcfg, data) = toy();
        let tcfg = TrainConfig { iterations: 4, ..Default::default() };
        let run = || {
            let m = GlNet::<f32>::new(&mcfg, 3).unwrap();
            let log = train(&m, &data, &tcfg, |_| {}).unwrap();
            (log, m.named_params())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].lr, 1e-3);
        assert!((a[3].lr - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_inputs_and_aborts_on_nan() {
        let (mcfg, data) = toy();
        let m = GlNet::<f32>::new(&mcfg, 0).unwrap();
        assert!(matches!(train(&m, &[], &TrainConfig::default(), |_| {}), Err(Error::Empty(_))));
        let bad = TrainConfig { lr_min: 1.0, ..Default::default() };
        assert!(train(&m, &data, &bad, |_| {}).is_err());
        let poison = TrainConfig { iterations: 3, poison_step: Some(1), ..Default::default() };
        assert!(matches!(
            train(&m, &data, &poison, |_| {}),
            Err(Error::NonFiniteLoss { step: 1, .. })
        ));
    }

    #[test]
    fn prepare_resizes_and_keeps_masks_binary() {
        let (_, data) = toy();
        let s = prepare(&data[0], 16).unwrap();
        assert!(s.images.iter().all(|i| i.width == 16 && i.data.len() == 16 * 16 * 3));
        assert!(s.masks.iter().all(|m| m.data.iter().all(|&v| v == 0 || v == 255)));
    }
}
