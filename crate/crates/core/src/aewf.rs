//! Adaptive intra/inter weighting fusion and the deconvolution decoder.

use crate::attention::ChannelAttention;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, VarBuilder};
use crate::tensor::{concat, lerp, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct FusionState<T: Scalar> {
    /// 1x1-reduced concatenation of `(F_ie, F_ia)`.
    pub f_cat: Tensor<T>,
    /// Per-element weight of the inter features, in (0,1).
    pub alpha: Tensor<T>,
    pub f_co: Tensor<T>,
}

pub struct Aewf<T: Scalar> {
    reduce: Conv2d<T>,
    ca: ChannelAttention<T>,
    squeeze: Conv2d<T>,
    excite: Conv2d<T>,
    channels: usize,
}

impl<T: Scalar> Aewf<T> {
    /// `reduction` sets both the channel attention ratio and the bottleneck width `C / reduction`.
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = channels / reduction.max(1);
        Ok(Self {
            reduce: Conv2d::new(vb, &format!("{name}.reduce"), 2 * channels, channels, 1, 1, 0)?,
            ca: ChannelAttention::new(vb, &format!("{name}.ca"), channels, reduction)?,
            squeeze: Conv2d::new(vb, &format!("{name}.squeeze"), channels, hidden, 1, 1, 0)?,
            excite: Conv2d::new(vb, &format!("{name}.excite"), hidden, channels, 1, 1, 0)?,
            channels,
        })
    }

    pub fn forward(&self, f_ia: &Tensor<T>, f_ie: &Tensor<T>) -> Result<FusionState<T>> {
        self.forward_with(f_ia, f_ie, None)
    }

    /// As `forward`, but a `Some(alpha)` replaces the learned weight map.
    pub fn forward_with(
        &self,
        f_ia: &Tensor<T>,
        f_ie: &Tensor<T>,
        alpha_override: Option<&Tensor<T>>,
    ) -> Result<FusionState<T>> {
        if f_ia.shape() != f_ie.shape() || f_ia.rank() != 3 || f_ia.shape()[0] != self.channels {
            return Err(shape_err(
                "aewf",
                format!("F_ia {:?} vs F_ie {:?}", f_ia.shape(), f_ie.shape()),
            ));
        }
        let f_cat = self.reduce.forward(&concat(&[f_ie.clone(), f_ia.clone()], 0)?)?;
        let alpha = match alpha_override {
            Some(a) => a.clone(),
            None => {
                let hidden = self.squeeze.forward(&self.ca.forward(&f_cat)?)?.relu()?;
                self.excite.forward(&hidden)?.sigmoid()?
            }
        };
        let f_co = lerp(f_ia, f_ie, &alpha)?;
        Ok(FusionState { f_cat, alpha, f_co })
    }
}

pub struct Decoder<T: Scalar> {
    blocks: Vec<ConvTranspose2d<T>>,
    head: Conv2d<T>,
}

/// Output channels of each upsampling block: halving from `channels`, floor 8.
pub fn decoder_widths(channels: usize, levels: usize) -> Vec<usize> {
    let mut c = channels;
    (0..levels)
        .map(|_| {
            c = (c / 2).max(8).min(c);
            c
        })
        .collect()
}

impl<T: Scalar> Decoder<T> {
    /// `stride` is the feature-to-image resolution ratio, a power of two.
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, stride: usize) -> Result<Self> {
        let levels = levels_for(stride)?;
        let mut c_in = channels;
        let mut blocks = Vec::with_capacity(levels);
        for (i, c_out) in decoder_widths(channels, levels).into_iter().enumerate() {
            blocks.push(ConvTranspose2d::new(vb, &format!("{name}.up{i}"), c_in, c_out, 4, 2, 1)?);
            c_in = c_out;
        }
        Ok(Self {
            blocks,
            head: Conv2d::new(vb, &format!("{name}.head"), c_in, 1, 1, 1, 0)?,
        })
    }

    /// `[C,H,W] -> [1, H*stride, W*stride]`, values in (0,1).
    pub fn forward(&self, f_co: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = f_co.clone();
        for b in &self.blocks {
            x = b.forward(&x)?.relu()?;
        }
        self.head.forward(&x)?.sigmoid()
    }
}

pub(crate) fn levels_for(stride: usize) -> Result<usize> {
    if stride == 0 || !stride.is_power_of_two() {
        return Err(Error::Config(format!("resolution ratio {stride} is not a power of two")));
    }
    Ok(stride.trailing_zeros() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize], seed: usize) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        Tensor::new((0..n).map(|i| ((i * 17 + seed * 5) % 23) as f32 / 11.0 - 1.0).collect(), shape).unwrap()
    }

    #[test]
    fn fixed_point_and_endpoints() {
        let mut vb = VarBuilder::<f32>::random(3);
        let f = Aewf::new(&mut vb, "aewf", 8, 4).unwrap();
        let x = ramp(&[8, 3, 3], 0);
        assert_eq!(f.forward(&x, &x).unwrap().f_co.to_vec(), x.to_vec());
        let y = ramp(&[8, 3, 3], 1);
        let zero = Tensor::<f32>::zeros(&[8, 3, 3]).unwrap();
        let one = Tensor::<f32>::full(&[8, 3, 3], 1.0).unwrap();
        assert_eq!(f.forward_with(&x, &y, Some(&zero)).unwrap().f_co.to_vec(), x.to_vec());
        assert_eq!(f.forward_with(&x, &y, Some(&one)).unwrap().f_co.to_vec(), y.to_vec());
    }

    #[test]
    fn alpha_in_open_unit_interval_and_output_between_inputs() {
        let mut vb = VarBuilder::<f32>::random(4);
        let f = Aewf::new(&mut vb, "aewf", 8, 4).unwrap();
        let (a, b) = (ramp(&[8, 4, 4], 2), ramp(&[8, 4, 4], 7));
        let s = f.forward(&a, &b).unwrap();
        assert!(s.alpha.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));
        for ((o, x), y) in s.f_co.to_vec().iter().zip(a.to_vec()).zip(b.to_vec()) {
            assert!(*o >= x.min(y) && *o <= x.max(y));
        }
    }

    #[test]
    fn decoder_shapes() {
        assert_eq!(decoder_widths(32, 3), vec![16, 8, 8]);
        assert_eq!(decoder_widths(4, 2), vec![4, 4]);
        let mut vb = VarBuilder::<f32>::random(5);
        let d = Decoder::new(&mut vb, "dec", 32, 8).unwrap();
        let out = d.forward(&ramp(&[32, 20, 20], 0)).unwrap();
        assert_eq!(out.shape(), &[1, 160, 160]);
        assert!(out.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(Decoder::new(&mut VarBuilder::<f32>::random(0), "d", 8, 6).is_err());
    }
}
