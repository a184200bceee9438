//! Adam with decoupled weight decay and the cosine learning-rate schedule.

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

pub struct AdamW {
    cfg: AdamConfig,
    params: Vec<Tensor<f32>>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u32,
}

impl AdamW {
    pub fn new(params: Vec<Tensor<f32>>, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        Self { cfg, v: m.clone(), m, params, t: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One update with learning rate `lr`; parameters without a gradient
    /// are treated as having a zero gradient.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad_or_zeros();
            let mut data = p.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                data[i] = data[i] * decay - (lr * mhat / (vhat.sqrt() + c.eps)) as f32;
            }
        }
    }
}

/// `lr_min + (lr_init - lr_min) (1 + cos(pi t / horizon)) / 2`, clamped at
/// the horizon. A zero horizon gives `lr_init`.
pub fn cosine_lr(lr_init: f64, lr_min: f64, t: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return lr_init;
    }
    let frac = t.min(horizon) as f64 / horizon as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
