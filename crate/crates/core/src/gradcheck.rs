//! Central finite-difference checks of analytic gradients.
//!
//! The analytic side runs the `f32` graph and its backward pass. The numeric
//! side only evaluates forward passes of an `f64` twin of the same function
//! (same parameter values), perturbing one coordinate at a time by `±step`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Step for functions built from ReLU or max layers, where `step` would
    /// straddle kinks.
    pub kink_step: f64,
    /// Replace sampled coordinates whose one-sided slopes disagree (the
    /// perturbation straddles a kink) by fresh ones.
    pub skip_kinks: bool,
    /// Coordinates sampled per probed tensor (all of them if fewer).
    pub samples_per_tensor: usize,
    /// Relative-error denominators never drop below this fraction of the
    /// largest numeric gradient sampled over all probed tensors.
    pub scale_floor: f64,
    pub seed: u64,
    /// Multiplies every analytic gradient before comparison (fault injection).
    pub analytic_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            kink_step: 1e-5,
            skip_kinks: false,
            samples_per_tensor: 6,
            scale_floor: 1e-2,
            seed: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates discarded as straddling a kink.
    pub skipped: usize,
    /// (tensor index, flat coordinate, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares gradients of a scalar loss with respect to `probe32` (through
/// `loss32`) against central differences of `loss64` over `probe64`. The two
/// probe lists must describe the same tensors in the same order.
pub fn check<F32, F64>(
    probe32: &[Tensor<f32>],
    loss32: F32,
    probe64: &[Tensor<f64>],
    loss64: F64,
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    F32: Fn() -> Result<Tensor<f32>>,
    F64: Fn() -> Result<Tensor<f64>>,
{
    assert_eq!(probe32.len(), probe64.len(), "probe lists differ in length");
    probe32.iter().for_each(|t| t.zero_grad());
    loss32()?.backward()?;
    let analytic: Vec<Vec<f32>> = probe32.iter().map(|t| t.grad_or_zeros()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampled = Vec::with_capacity(probe64.len());
    let mut skipped = 0;
    for t64 in probe64 {
        let n = t64.numel();
        let want = cfg.samples_per_tensor.min(n);
        // a few spares in case some candidates sit on kinks
        let order = sample(&mut rng, n, (4 * want).min(n)).into_vec();
        let mut picked = Vec::with_capacity(want);
        for j in order {
            if picked.len() == want {
                break;
            }
            let d = differences(t64, j, cfg.step, &loss64)?;
            if cfg.skip_kinks && d.straddles_kink() {
                skipped += 1;
                continue;
            }
            picked.push((j, d.central()));
        }
        picked.sort_unstable_by_key(|&(j, _)| j);
        sampled.push(picked.into_iter().unzip::<_, _, Vec<usize>, Vec<f64>>());
    }
    let scale = sampled
        .iter()
        .flat_map(|(_, num)| num.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = GradReport { skipped, ..Default::default() };
    for (ti, ((coords, numeric), grads)) in sampled.iter().zip(&analytic).enumerate() {
        for (&j, &num) in coords.iter().zip(numeric) {
            let ana = grads[j] as f64 * cfg.analytic_scale;
            let denom = ana.abs().max(num.abs()).max(cfg.scale_floor * scale);
            let err = if denom == 0.0 { 0.0 } else { (ana - num).abs() / denom };
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ti, j, ana, num));
            }
        }
    }
    Ok(report)
}

/// Loss values at `x - h`, `x`, `x + h` along one coordinate.
struct Differences {
    minus: f64,
    mid: f64,
    plus: f64,
    h: f64,
}

impl Differences {
    fn central(&self) -> f64 {
        (self.plus - self.minus) / (2.0 * self.h)
    }

    fn straddles_kink(&self) -> bool {
        let forward = (self.plus - self.mid) / self.h;
        let backward = (self.mid - self.minus) / self.h;
        (forward - backward).abs() > 1e-3 * self.central().abs().max(1e-6)
    }
}

fn differences<F>(t: &Tensor<f64>, j: usize, h: f64, loss: &F) -> Result<Differences>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    let orig = t.data()[j];
    let eval = |v: f64| -> Result<f64> {
        t.data_mut()[j] = v;
        no_grad(|| loss().map(|l| l.item()))
    };
    let plus = eval(orig + h);
    let minus = eval(orig - h);
    let mid = eval(orig);
    t.data_mut()[j] = orig;
    Ok(Differences { minus: minus?, mid: mid?, plus: plus?, h })
}

/// Builds matching `f32` / `f64` variables from one set of values.
pub fn twin(values: Vec<f32>, shape: &[usize]) -> Result<(Tensor<f32>, Tensor<f64>)> {
    let a = Tensor::<f32>::variable(values, shape)?;
    let b = a.cast::<f64>(true);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_scaled_gradients() {
        let (x32, x64) = twin(vec![0.3, -0.7, 0.9], &[3]).unwrap();
        let l32 = || x32.mul(&x32)?.mul(&x32)?.sum();
        let l64 = || x64.mul(&x64)?.mul(&x64)?.sum();
        let ok = check(&[x32.clone()], l32, &[x64.clone()], l64, &GradCheckConfig::default()).unwrap();
        assert!(ok.passes(1e-3), "{ok:?}");
        let bad_cfg = GradCheckConfig { analytic_scale: 1.01, ..Default::default() };
        let bad = check(&[x32.clone()], l32, &[x64.clone()], l64, &bad_cfg).unwrap();
        assert!(!bad.passes(1e-3));
        // perturbations are undone
        assert_eq!(x64.to_vec(), vec![0.3f32 as f64, -0.7f32 as f64, 0.9f32 as f64]);
    }
}
