//! Global correspondence: the group is stacked along a depth axis and
//! collapsed to a single feature map by valid-depth 3D convolutions.

use crate::attention::{AttentionConfig, Refine};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, Conv3d, VarBuilder};
use crate::tensor::{stack, Scalar, Tensor};

/// Intra features of a whole group, `[C,N,H,W]`, depth ordered as given.
#[derive(Clone, Debug)]
pub struct GroupStack<T: Scalar>(Tensor<T>);

impl<T: Scalar> GroupStack<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn group_size(&self) -> usize {
        self.0.shape()[1]
    }

    /// Splits back into the per-image `[C,H,W]` maps.
    pub fn unstack(&self) -> Result<Vec<Tensor<T>>> {
        let s = self.0.shape().to_vec();
        (0..s[1])
            .map(|n| self.0.narrow(1, n, 1)?.reshape(&[s[0], s[2], s[3]]))
            .collect()
    }
}

/// Stacks `N >= 2` equally shaped `[C,H,W]` feature maps into `[C,N,H,W]`.
pub fn stack_group<T: Scalar>(features: &[Tensor<T>]) -> Result<GroupStack<T>> {
    if features.len() < 2 {
        return Err(Error::GroupSize {
            got: features.len(),
            reason: "a group needs at least two images".into(),
        });
    }
    if features[0].rank() != 3 {
        return Err(shape_err("stack_group", format!("expected [C,H,W], got {:?}", features[0].shape())));
    }
    Ok(GroupStack(stack(features, 1)?))
}

/// Kernel depths that reduce a depth-`n` stack to depth 1: `(2,3,2)` for five
/// images, otherwise `n - 1` depth-2 kernels.
pub fn depth_schedule(n: usize) -> Result<Vec<usize>> {
    match n {
        0 | 1 => Err(Error::GroupSize {
            got: n,
            reason: "a group needs at least two images".into(),
        }),
        5 => Ok(vec![2, 3, 2]),
        _ => Ok(vec![2; n - 1]),
    }
}

/// Depth remaining after applying `kernels` to a depth-`n` stack.
pub fn final_depth(n: usize, kernels: &[usize]) -> Option<usize> {
    kernels.iter().try_fold(n, |d, &k| (k <= d).then(|| d - k + 1))
}

#[derive(Clone, Debug)]
pub struct GlobalCorrespondence<T: Scalar> {
    /// Output of the convolution stack, before attention.
    pub g: Tensor<T>,
    /// `SA(CA(g))`.
    pub global: Tensor<T>,
}

enum Layers<T: Scalar> {
    Volumetric(Vec<Conv3d<T>>),
    /// Ablation: images concatenated along channels, then ordinary 2D convs.
    Planar(Vec<Conv2d<T>>),
}

pub struct Gcm<T: Scalar> {
    layers: Layers<T>,
    refine: Refine<T>,
    group_size: usize,
    channels: usize,
}

impl<T: Scalar> Gcm<T> {
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        channels: usize,
        group_size: usize,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        let kernels = depth_schedule(group_size)?;
        assert_eq!(final_depth(group_size, &kernels), Some(1), "schedule must collapse depth");
        let layers = kernels
            .iter()
            .enumerate()
            .map(|(i, &kd)| Conv3d::new(vb, &format!("{name}.conv{i}"), channels, channels, kd, 3))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: Layers::Volumetric(layers),
            refine: Refine::new(vb, &format!("{name}.refine"), channels, attn)?,
            group_size,
            channels,
        })
    }

    /// The "3D replaced by 2D" ablation: three 3x3 convolutions over the
    /// channel-concatenated group (`C*N -> C -> C -> C`).
    pub fn new_planar(
        vb: &mut VarBuilder<T>,
        name: &str,
        channels: usize,
        group_size: usize,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        depth_schedule(group_size)?;
        let widths = [channels * group_size, channels, channels, channels];
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(vb, &format!("{name}.conv{i}"), w[0], w[1], 3, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: Layers::Planar(layers),
            refine: Refine::new(vb, &format!("{name}.refine"), channels, attn)?,
            group_size,
            channels,
        })
    }

    pub fn forward(&self, group: &GroupStack<T>) -> Result<GlobalCorrespondence<T>> {
        let s = group.tensor().shape().to_vec();
        if s[0] != self.channels || s[1] != self.group_size {
            return Err(Error::GroupSize {
                got: s[1],
                reason: format!(
                    "global branch was built for {} images of {} channels, got {s:?}",
                    self.group_size, self.channels
                ),
            });
        }
        let (c, h, w) = (s[0], s[2], s[3]);
        let g = match &self.layers {
            Layers::Volumetric(convs) => {
                let mut x = group.tensor().clone();
                for conv in convs {
                    x = conv.forward(&x)?.relu()?;
                }
                debug_assert_eq!(x.shape()[1], 1);
                x.reshape(&[c, h, w])?
            }
            Layers::Planar(convs) => {
                let mut x = group.tensor().reshape(&[c * self.group_size, h, w])?;
                for conv in convs {
                    x = conv.forward(&x)?.relu()?;
                }
                x
            }
        };
        let global = self.refine.forward(&g)?;
        Ok(GlobalCorrespondence { g, global })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_keeps_order_and_round_trips() {
        let ones = Tensor::<f32>::full(&[2, 3, 3], 1.0).unwrap();
        let zeros = Tensor::<f32>::zeros(&[2, 3, 3]).unwrap();
        let st = stack_group(&[ones.clone(), zeros.clone()]).unwrap();
        assert_eq!(st.tensor().shape(), &[2, 2, 3, 3]);
        let data = st.tensor().to_vec();
        // channel 0, depth 0 then depth 1
        assert!(data[..9].iter().all(|&v| v == 1.0));
        assert!(data[9..18].iter().all(|&v| v == 0.0));
        let back = st.unstack().unwrap();
        assert_eq!(back[0].to_vec(), ones.to_vec());
        assert_eq!(back[1].to_vec(), zeros.to_vec());
    }

    #[test]
    fn stacking_rejects_bad_groups() {
        let a = Tensor::<f32>::zeros(&[2, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 4, 3]).unwrap();
        assert!(stack_group(&[a.clone()]).is_err());
        assert!(stack_group(&[a, b]).is_err());
    }

    #[test]
    fn five_image_stack_shape() {
        let feats: Vec<_> = (0..5).map(|_| Tensor::<f32>::zeros(&[8, 6, 6]).unwrap()).collect();
        assert_eq!(stack_group(&feats).unwrap().tensor().shape(), &[8, 5, 6, 6]);
    }

    #[test]
    fn schedules_collapse_to_one() {
        assert_eq!(depth_schedule(5).unwrap(), vec![2, 3, 2]);
        for n in 2..=9 {
            assert_eq!(final_depth(n, &depth_schedule(n).unwrap()), Some(1), "n = {n}");
        }
        assert!(depth_schedule(1).is_err());
        assert_eq!(final_depth(2, &[3]), None);
    }

    #[test]
    fn zero_group_gives_zero_global_features() {
        let mut vb = VarBuilder::<f32>::random(4);
        let gcm = Gcm::new(&mut vb, "gcm", 8, 5, &AttentionConfig::default()).unwrap();
        let feats: Vec<_> = (0..5).map(|_| Tensor::<f32>::zeros(&[8, 6, 6]).unwrap()).collect();
        let out = gcm.forward(&stack_group(&feats).unwrap()).unwrap();
        assert_eq!(out.global.shape(), &[8, 6, 6]);
        assert!(out.g.to_vec().iter().all(|&v| v == 0.0));
        assert!(out.global.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_group_size_is_rejected() {
        let mut vb = VarBuilder::<f32>::random(4);
        let gcm = Gcm::new(&mut vb, "gcm", 4, 3, &AttentionConfig::default()).unwrap();
        let feats: Vec<_> = (0..4).map(|_| Tensor::<f32>::zeros(&[4, 2, 2]).unwrap()).collect();
        assert!(gcm.forward(&stack_group(&feats).unwrap()).is_err());
    }

    #[test]
    fn planar_variant_preserves_shape() {
        let mut vb = VarBuilder::<f32>::random(4);
        let gcm = Gcm::new_planar(&mut vb, "gcm", 4, 3, &AttentionConfig::default()).unwrap();
        let feats: Vec<_> = (0..3).map(|_| Tensor::<f32>::full(&[4, 5, 5], 0.3).unwrap()).collect();
        let out = gcm.forward(&stack_group(&feats).unwrap()).unwrap();
        assert_eq!(out.global.shape(), &[4, 5, 5]);
    }
}
