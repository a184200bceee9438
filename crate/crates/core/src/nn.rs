//! Parameter management and the convolution layers the model is built from.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv3d, transposed_conv2d, Scalar, Tensor};

/// A named parameter snapshot in storage precision.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform on `(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    Zeros,
}

enum Source {
    Random(ChaCha8Rng),
    Named(HashMap<String, NamedParam>),
}

/// Creates (or looks up) the parameters of a model while it is being built.
///
/// Random initialisation draws `f32` values regardless of `T`, so a model
/// built in `f64` from the same seed holds exactly the values of its `f32`
/// twin.
pub struct VarBuilder<T: Scalar> {
    source: Source,
    params: Vec<(String, Tensor<T>)>,
    names: HashSet<String>,
}

impl<T: Scalar> VarBuilder<T> {
    pub fn random(seed: u64) -> Self {
        Self {
            source: Source::Random(ChaCha8Rng::seed_from_u64(seed)),
            params: Vec::new(),
            names: HashSet::new(),
        }
    }

    pub fn from_named(params: &[NamedParam]) -> Self {
        Self {
            source: Source::Named(params.iter().map(|p| (p.name.clone(), p.clone())).collect()),
            params: Vec::new(),
            names: HashSet::new(),
        }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<T>> {
        if name.is_empty() || !self.names.insert(name.to_string()) {
            return Err(Error::Config(format!("duplicate or empty parameter name {name:?}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match &mut self.source {
            Source::Random(rng) => match init {
                Init::Zeros => vec![0.0; n],
                Init::XavierUniform { fan_in, fan_out } => {
                    let b = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    (0..n).map(|_| rng.gen_range(-b..b)).collect()
                }
            },
            Source::Named(map) => {
                let p = map
                    .get(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if p.shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, model expects {shape:?}",
                        p.shape
                    )));
                }
                p.data.clone()
            }
        };
        let t = Tensor::variable(values.into_iter().map(|v| T::of(v as f64)).collect(), shape)?;
        self.params.push((name.to_string(), t.clone()));
        Ok(t)
    }

    /// Fails if a named source still holds parameters the model never asked for.
    pub fn finish(self) -> Result<Vec<(String, Tensor<T>)>> {
        if let Source::Named(map) = &self.source {
            if let Some(extra) = map.keys().find(|k| !self.names.contains(*k)) {
                return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
            }
        }
        Ok(self.params)
    }
}

pub fn snapshot<T: Scalar>(params: &[(String, Tensor<T>)]) -> Vec<NamedParam> {
    params
        .iter()
        .map(|(name, t)| NamedParam {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.to_f32_vec(),
        })
        .collect()
}

pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Square `k x k` kernel.
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let weight = vb.get(
            &format!("{name}.weight"),
            &[c_out, c_in, k, k],
            Init::XavierUniform { fan_in: c_in * k * k, fan_out: c_out * k * k },
        )?;
        let bias = vb.get(&format!("{name}.bias"), &[c_out], Init::Zeros)?;
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }
}

pub struct Conv3d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    spatial_pad: usize,
}

impl<T: Scalar> Conv3d<T> {
    /// Kernel `depth x k x k`, spatial padding `(k - 1) / 2`.
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        depth: usize,
        k: usize,
    ) -> Result<Self> {
        let taps = depth * k * k;
        let weight = vb.get(
            &format!("{name}.weight"),
            &[c_out, c_in, depth, k, k],
            Init::XavierUniform { fan_in: c_in * taps, fan_out: c_out * taps },
        )?;
        let bias = vb.get(&format!("{name}.bias"), &[c_out], Init::Zeros)?;
        Ok(Self { weight, bias, spatial_pad: (k - 1) / 2 })
    }

    pub fn depth(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv3d(x, &self.weight, &self.bias, self.spatial_pad)
    }
}

pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let weight = vb.get(
            &format!("{name}.weight"),
            &[c_in, c_out, k, k],
            Init::XavierUniform { fan_in: c_in * k * k, fan_out: c_out * k * k },
        )?;
        let bias = vb.get(&format!("{name}.bias"), &[c_out], Init::Zeros)?;
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        transposed_conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let mut vb = VarBuilder::<f32>::random(3);
        let conv = Conv2d::new(&mut vb, "c", 4, 8, 3, 1, 1).unwrap();
        let b = (6.0f32 / (36 + 72) as f32).sqrt();
        assert!(conv.weight.to_vec().iter().all(|v| v.abs() < b));
        assert!(conv.bias.to_vec().iter().all(|&v| v == 0.0));
        let params = vb.finish().unwrap();
        assert_eq!(params.len(), 2);
        assert!(params.iter().all(|(_, t)| t.requires_grad()));
    }

    #[test]
    fn seeded_f32_and_f64_builds_agree() {
        let mut a = VarBuilder::<f32>::random(11);
        let mut b = VarBuilder::<f64>::random(11);
        let ca = Conv3d::new(&mut a, "x", 2, 2, 2, 3).unwrap();
        let cb = Conv3d::new(&mut b, "x", 2, 2, 2, 3).unwrap();
        let wa = ca.weight.to_vec();
        let wb = cb.weight.to_vec();
        assert!(wa.iter().zip(&wb).all(|(x, y)| *x as f64 == *y));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut vb = VarBuilder::<f32>::random(0);
        vb.get("p", &[1], Init::Zeros).unwrap();
        assert!(vb.get("p", &[1], Init::Zeros).is_err());
        assert!(vb.get("", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn named_source_checks_shapes_and_leftovers() {
        let mut vb = VarBuilder::<f32>::random(5);
        let _ = Conv2d::new(&mut vb, "c", 2, 2, 1, 1, 0).unwrap();
        let snap = snapshot(&vb.finish().unwrap());

        let mut again = VarBuilder::<f32>::from_named(&snap);
        let c = Conv2d::new(&mut again, "c", 2, 2, 1, 1, 0).unwrap();
        assert_eq!(c.weight.to_vec(), snap[0].data);
        assert!(again.finish().is_ok());

        let mut wrong = VarBuilder::<f32>::from_named(&snap);
        assert!(Conv2d::new(&mut wrong, "c", 2, 3, 1, 1, 0).is_err());

        let partial = VarBuilder::<f32>::from_named(&snap);
        assert!(partial.finish().is_err());
    }
}
