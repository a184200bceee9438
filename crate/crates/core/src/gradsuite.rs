//! Finite-difference gradient checks for every differentiable building block
//! at toy shapes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aewf::{Aewf, Decoder};
use crate::attention::{AttentionConfig, ChannelAttention, SpatialAttention};
use crate::error::{Error, Result};
use crate::gcm::{stack_group, Gcm};
use crate::gla::Gla;
use crate::gradcheck::{check, GradCheckConfig, GradReport};
use crate::lcm::{Lcm, Pct};
use crate::loss::bce_group_loss;
use crate::model::{Backbone, GlNet, ModelConfig};
use crate::nn::VarBuilder;
use crate::tensor::{bce_loss, conv2d, conv3d, matmul, rowmax, softmax_vec, transposed_conv2d, Scalar, Tensor};

/// Names of all suites, in the order they run.
pub const SUITES: &[&str] = &[
    "conv2d",
    "conv3d",
    "transposed_conv2d",
    "matmul",
    "softmax",
    "rowmax",
    "bce_loss",
    "channel_attention",
    "spatial_attention",
    "gcm",
    "pct",
    "lcm_fuse",
    "gla",
    "aewf",
    "decoder",
    "backbone",
    "full_model",
];

/// Suites containing ReLU or max layers; checked with the smaller step.
const PIECEWISE: &[&str] = &[
    "channel_attention",
    "spatial_attention",
    "gcm",
    "pct",
    "lcm_fuse",
    "gla",
    "aewf",
    "decoder",
    "backbone",
    "full_model",
];

type LossFn<T> = Box<dyn Fn() -> Result<Tensor<T>>>;

/// Uniform values on `[lo, hi)`, always drawn in `f32` so both precisions see
/// identical inputs.
struct Inputs(ChaCha8Rng);

impl Inputs {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe))
    }

    fn values(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.0.gen_range(lo..hi)).collect()
    }

    fn var<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n = shape.iter().product();
        Tensor::variable(self.values(n, -1.0, 1.0).into_iter().map(|v| T::of(v as f64)).collect(), shape)
    }

    fn constant<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n = shape.iter().product();
        Tensor::new(self.values(n, -1.0, 1.0).into_iter().map(|v| T::of(v as f64)).collect(), shape)
    }
}

/// `sum(out * r)` for a fixed random `r`, so every output element matters
/// with a distinct weight.
fn weighted<T: Scalar>(out: Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    out.mul(r)?.sum()
}

/// Biases start at zero, which puts ReLUs fed by all-zero patches exactly on
/// their kink; random biases keep the checked points differentiable.
fn randomize_biases<T: Scalar>(named: &[(String, Tensor<T>)], inp: &mut Inputs) {
    for (name, t) in named {
        if name.ends_with(".bias") {
            let vals = inp.values(t.numel(), -0.5, 0.5);
            t.data_mut().iter_mut().zip(vals).for_each(|(d, v)| *d = T::of(v as f64));
        }
    }
}

fn params<T: Scalar>(vb: VarBuilder<T>, inp: &mut Inputs) -> Result<Vec<Tensor<T>>> {
    let named = vb.finish()?;
    randomize_biases(&named, inp);
    Ok(named.into_iter().map(|(_, t)| t).collect())
}

fn build<T: Scalar>(name: &str, seed: u64) -> Result<(Vec<Tensor<T>>, LossFn<T>)> {
    let mut inp = Inputs::new(seed);
    let mut vb = VarBuilder::<T>::random(seed);
    let attn = AttentionConfig { reduction: 4, spatial_kernel: 3 };
    Ok(match name {
        "conv2d" => {
            let (x, w, b) = (inp.var(&[2, 5, 5])?, inp.var(&[2, 2, 3, 3])?, inp.var(&[2])?);
            let r = inp.constant(&[2, 3, 3])?;
            let probes = vec![x.clone(), w.clone(), b.clone()];
            (probes, Box::new(move || weighted(conv2d(&x, &w, &b, 2, 1)?, &r)))
        }
        "conv3d" => {
            let (x, w, b) = (inp.var(&[2, 3, 4, 4])?, inp.var(&[2, 2, 2, 3, 3])?, inp.var(&[2])?);
            let r = inp.constant(&[2, 2, 4, 4])?;
            let probes = vec![x.clone(), w.clone(), b.clone()];
            (probes, Box::new(move || weighted(conv3d(&x, &w, &b, 1)?, &r)))
        }
        "transposed_conv2d" => {
            let (x, w, b) = (inp.var(&[2, 3, 3])?, inp.var(&[2, 2, 4, 4])?, inp.var(&[2])?);
            let r = inp.constant(&[2, 6, 6])?;
            let probes = vec![x.clone(), w.clone(), b.clone()];
            (probes, Box::new(move || weighted(transposed_conv2d(&x, &w, &b, 2, 1)?, &r)))
        }
        "matmul" => {
            let (a, b) = (inp.var(&[3, 4])?, inp.var(&[4, 2])?);
            let r = inp.constant(&[3, 2])?;
            let probes = vec![a.clone(), b.clone()];
            (probes, Box::new(move || weighted(matmul(&a, &b)?, &r)))
        }
        "softmax" => {
            let v = inp.var(&[6])?;
            let r = inp.constant(&[6])?;
            (vec![v.clone()], Box::new(move || weighted(softmax_vec(&v)?, &r)))
        }
        "rowmax" => {
            // well separated entries so no perturbation changes an argmax
            let mut levels: Vec<usize> = (0..20).collect();
            levels.shuffle(&mut inp.0);
            let jitter = inp.values(20, 0.0, 0.05);
            let vals = levels.iter().zip(jitter).map(|(&l, j)| T::of((l as f32 * 0.1 - 1.0 + j) as f64));
            let a = Tensor::variable(vals.collect(), &[4, 5])?;
            let r = inp.constant(&[4])?;
            (vec![a.clone()], Box::new(move || weighted(rowmax(&a)?, &r)))
        }
        "bce_loss" => {
            let raw = inp.values(16, 0.05, 0.95);
            let p = Tensor::variable(raw.into_iter().map(|v| T::of(v as f64)).collect(), &[1, 4, 4])?;
            let t = inp.values(16, 0.0, 1.0).into_iter().map(|v| T::of(if v < 0.5 { 0.0 } else { 1.0 }));
            let t = Tensor::new(t.collect(), &[1, 4, 4])?;
            (vec![p.clone()], Box::new(move || bce_loss(&p, &t)))
        }
        "channel_attention" => {
            let ca = ChannelAttention::new(&mut vb, "ca", 8, 4)?;
            let f = inp.var(&[8, 4, 4])?;
            let r = inp.constant(&[8, 4, 4])?;
            let mut probes = params(vb, &mut inp)?;
            probes.insert(0, f.clone());
            (probes, Box::new(move || weighted(ca.forward(&f)?, &r)))
        }
        "spatial_attention" => {
            let sa = SpatialAttention::new(&mut vb, "sa", 3)?;
            let f = inp.var(&[4, 5, 5])?;
            let r = inp.constant(&[4, 5, 5])?;
            let mut probes = params(vb, &mut inp)?;
            probes.insert(0, f.clone());
            (probes, Box::new(move || weighted(sa.forward(&f)?, &r)))
        }
        "gcm" => {
            let gcm = Gcm::new(&mut vb, "gcm", 4, 5, &attn)?;
            let feats = (0..5).map(|_| inp.var(&[4, 4, 4])).collect::<Result<Vec<_>>>()?;
            let r = inp.constant(&[4, 4, 4])?;
            let mut probes = params(vb, &mut inp)?;
            probes.extend(feats.iter().cloned());
            (probes, Box::new(move || weighted(gcm.forward(&stack_group(&feats)?)?.global, &r)))
        }
        "pct" => {
            let pct = Pct::new(&mut vb, "pct", 4, false, &attn)?;
            let (fk, fj) = (inp.var(&[4, 3, 3])?, inp.var(&[4, 3, 3])?);
            let r = inp.constant(&[4, 3, 3])?;
            let mut probes = params(vb, &mut inp)?;
            probes.extend([fk.clone(), fj.clone()]);
            (probes, Box::new(move || weighted(pct.forward(&fk, &fj)?.correlation, &r)))
        }
        "lcm_fuse" => {
            let lcm = Lcm::new(&mut vb, "lcm", 4, 4, false, &attn)?;
            let w = (0..3).map(|_| inp.var(&[4, 3, 3])).collect::<Result<Vec<_>>>()?;
            let r = inp.constant(&[4, 3, 3])?;
            // only the fusion layers: the PCT parameters are not on this path
            let named = vb.finish()?;
            randomize_biases(&named, &mut inp);
            let mut probes: Vec<_> = named
                .into_iter()
                .filter(|(n, _)| n.contains(".fuse"))
                .map(|(_, t)| t)
                .collect();
            probes.extend(w.iter().cloned());
            (probes, Box::new(move || weighted(lcm.fuse(&w)?, &r)))
        }
        "gla" => {
            let gla = Gla::new(&mut vb, "gla", 4, &attn)?;
            let (g, p) = (inp.var(&[4, 3, 3])?, inp.var(&[4, 3, 3])?);
            let r = inp.constant(&[4, 3, 3])?;
            let mut probes = params(vb, &mut inp)?;
            probes.extend([g.clone(), p.clone()]);
            (probes, Box::new(move || weighted(gla.forward(&g, &p)?, &r)))
        }
        "aewf" => {
            let aewf = Aewf::new(&mut vb, "aewf", 8, 4)?;
            let (a, e) = (inp.var(&[8, 3, 3])?, inp.var(&[8, 3, 3])?);
            let r = inp.constant(&[8, 3, 3])?;
            let mut probes = params(vb, &mut inp)?;
            probes.extend([a.clone(), e.clone()]);
            (probes, Box::new(move || weighted(aewf.forward(&a, &e)?.f_co, &r)))
        }
        "decoder" => {
            let dec = Decoder::new(&mut vb, "dec", 8, 4)?;
            let f = inp.var(&[8, 3, 3])?;
            let r = inp.constant(&[1, 12, 12])?;
            let mut probes = params(vb, &mut inp)?;
            probes.insert(0, f.clone());
            (probes, Box::new(move || weighted(dec.forward(&f)?, &r)))
        }
        "backbone" => {
            let bb = Backbone::new(&mut vb, "bb", 8, 4)?;
            let raw = inp.values(3 * 16 * 16, 0.0, 1.0);
            let img = Tensor::variable(raw.into_iter().map(|v| T::of(v as f64)).collect(), &[3, 16, 16])?;
            let r = inp.constant(&[8, 4, 4])?;
            let mut probes = params(vb, &mut inp)?;
            probes.insert(0, img.clone());
            (probes, Box::new(move || weighted(bb.forward(&img)?, &r)))
        }
        "full_model" => {
            drop(vb);
            let cfg = ModelConfig { group_size: 3, side: 16, channels: 8, stride: 4, ..Default::default() };
            let net = GlNet::<T>::new(&cfg, seed)?;
            randomize_biases(net.params(), &mut inp);
            let images = (0..3)
                .map(|_| {
                    let raw = inp.values(3 * 16 * 16, 0.0, 1.0);
                    Tensor::new(raw.into_iter().map(|v| T::of(v as f64)).collect(), &[3, 16, 16])
                })
                .collect::<Result<Vec<_>>>()?;
            let masks = (0..3)
                .map(|_| {
                    let raw = inp.values(16 * 16, 0.0, 1.0);
                    Tensor::new(raw.into_iter().map(|v| T::of(if v < 0.3 { 1.0 } else { 0.0 })).collect(), &[1, 16, 16])
                })
                .collect::<Result<Vec<_>>>()?;
            let probes = net.params().iter().map(|(_, t)| t.clone()).collect();
            (probes, Box::new(move || bce_group_loss(&net.forward_group(&images)?, &masks)))
        }
        other => return Err(Error::Config(format!("unknown gradient suite {other:?}"))),
    })
}

/// Runs one named suite.
pub fn run_suite(name: &str, cfg: &GradCheckConfig) -> Result<GradReport> {
    let (p32, l32) = build::<f32>(name, cfg.seed)?;
    let (p64, l64) = build::<f64>(name, cfg.seed)?;
    if PIECEWISE.contains(&name) {
        let cfg = GradCheckConfig { step: cfg.step.min(cfg.kink_step), skip_kinks: true, ..cfg.clone() };
        return check(&p32, l32, &p64, l64, &cfg);
    }
    check(&p32, l32, &p64, l64, cfg)
}

/// Runs every suite in [`SUITES`] order.
pub fn run_all(cfg: &GradCheckConfig) -> Result<Vec<(&'static str, GradReport)>> {
    SUITES.iter().map(|&n| Ok((n, run_suite(n, cfg)?))).collect()
}
