//! Channel attention (squeeze-excitation style) and spatial attention
//! (convolutional-block-attention style) gates.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, VarBuilder};
use crate::tensor::{concat, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Channel reduction ratio of the channel gate; must divide `C`.
    pub reduction: usize,
    /// Odd kernel size of the spatial gate convolution.
    pub spatial_kernel: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { reduction: 4, spatial_kernel: 7 }
    }
}

impl AttentionConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.reduction == 0 || channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "reduction ratio {} must divide {channels} channels",
                self.reduction
            )));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "spatial attention kernel {} must be odd",
                self.spatial_kernel
            )));
        }
        Ok(())
    }
}

/// `out[c] = s[c] * F[c]` with `s = sigmoid(expand(relu(reduce(avgpool(F)))))`.
pub struct ChannelAttention<T: Scalar> {
    pub reduce: Conv2d<T>,
    pub expand: Conv2d<T>,
    channels: usize,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "reduction ratio {reduction} must divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            reduce: Conv2d::new(vb, &format!("{name}.reduce"), channels, hidden, 1, 1, 0)?,
            expand: Conv2d::new(vb, &format!("{name}.expand"), hidden, channels, 1, 1, 0)?,
            channels,
        })
    }

    /// Per-channel gate `[C,1,1]`, values in (0,1).
    pub fn gate(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.rank() != 3 || f.shape()[0] != self.channels {
            return Err(shape_err(
                "channel_attention",
                format!("expected [{},H,W], got {:?}", self.channels, f.shape()),
            ));
        }
        let squeezed = f.spatial_mean()?;
        self.expand.forward(&self.reduce.forward(&squeezed)?.relu()?)?.sigmoid()
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        f.mul(&self.gate(f)?)
    }
}

/// `out[c,h,w] = m[h,w] * F[c,h,w]` with
/// `m = sigmoid(conv([mean_c(F), max_c(F)]))`.
pub struct SpatialAttention<T: Scalar> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(vb: &mut VarBuilder<T>, name: &str, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("spatial attention kernel {kernel} must be odd")));
        }
        Ok(Self {
            conv: Conv2d::new(vb, &format!("{name}.conv"), 2, 1, kernel, 1, (kernel - 1) / 2)?,
        })
    }

    /// Location gate `[1,H,W]`, values in (0,1).
    pub fn gate(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.rank() != 3 {
            return Err(shape_err(
                "spatial_attention",
                format!("expected [C,H,W], got {:?}", f.shape()),
            ));
        }
        let pooled = concat(&[f.channel_mean()?, f.channel_max()?], 0)?;
        self.conv.forward(&pooled)?.sigmoid()
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        f.mul(&self.gate(f)?)
    }
}

/// Channel attention followed by spatial attention, `SA(CA(F))`.
pub struct Refine<T: Scalar> {
    pub ca: ChannelAttention<T>,
    pub sa: SpatialAttention<T>,
}

impl<T: Scalar> Refine<T> {
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            ca: ChannelAttention::new(vb, &format!("{name}.ca"), channels, cfg.reduction)?,
            sa: SpatialAttention::new(vb, &format!("{name}.sa"), cfg.spatial_kernel)?,
        })
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        self.sa.forward(&self.ca.forward(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_all<T: Scalar>(params: &[(String, Tensor<T>)]) {
        for (_, p) in params {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new((0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect(), shape).unwrap()
    }

    #[test]
    fn zero_parameters_give_half_gates() {
        let mut vb = VarBuilder::<f64>::random(1);
        let ca = ChannelAttention::new(&mut vb, "ca", 8, 4).unwrap();
        let sa = SpatialAttention::new(&mut vb, "sa", 7).unwrap();
        zero_all(&vb.finish().unwrap());
        let f = ramp(&[8, 5, 5]);
        let half: Vec<f64> = f.to_vec().iter().map(|v| 0.5 * v).collect();
        assert_eq!(ca.forward(&f).unwrap().to_vec(), half);
        assert_eq!(sa.forward(&f).unwrap().to_vec(), half);
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut vb = VarBuilder::<f32>::random(2);
        let r = Refine::new(&mut vb, "r", 8, &AttentionConfig::default()).unwrap();
        let f = Tensor::<f32>::zeros(&[8, 4, 4]).unwrap();
        assert!(r.forward(&f).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gates_are_shared_along_their_broadcast_axes() {
        let mut vb = VarBuilder::<f64>::random(3);
        let ca = ChannelAttention::new(&mut vb, "ca", 4, 2).unwrap();
        let sa = SpatialAttention::new(&mut vb, "sa", 3).unwrap();
        let f = ramp(&[4, 3, 3]);
        let x = f.to_vec();
        let out = ca.forward(&f).unwrap().to_vec();
        for c in 0..4 {
            let ratios: Vec<f64> = (0..9)
                .filter(|i| x[c * 9 + i] != 0.0)
                .map(|i| out[c * 9 + i] / x[c * 9 + i])
                .collect();
            assert!(ratios.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
            assert!(ratios.iter().all(|r| *r > 0.0 && *r < 1.0));
        }
        let out = sa.forward(&f).unwrap().to_vec();
        for i in 0..9 {
            let ratios: Vec<f64> = (0..4)
                .filter(|c| x[c * 9 + i] != 0.0)
                .map(|c| out[c * 9 + i] / x[c * 9 + i])
                .collect();
            assert!(ratios.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn invalid_configurations() {
        let mut vb = VarBuilder::<f32>::random(0);
        assert!(ChannelAttention::new(&mut vb, "a", 6, 4).is_err());
        assert!(SpatialAttention::new(&mut vb, "b", 4).is_err());
        let mut vb = VarBuilder::<f32>::random(0);
        let ca = ChannelAttention::new(&mut vb, "a", 8, 4).unwrap();
        assert!(ca.forward(&Tensor::zeros(&[4, 2, 2]).unwrap()).is_err());
    }
}
