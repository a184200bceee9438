//! Local correspondence: pairwise correlation transformation (PCT) between
//! the current image and each reference image, fused by depth-2 3D convs.

use crate::attention::{AttentionConfig, Refine};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, Conv3d, VarBuilder};
use crate::tensor::{matmul, rowmax, softmax_vec, stack, Scalar, Tensor};

/// Intermediate and final tensors of one PCT application.
#[derive(Clone, Debug)]
pub struct PairwiseCorrelation<T: Scalar> {
    /// `[HW,HW]` dot products between projected locations of image k (rows)
    /// and image j (columns).
    pub affinity: Tensor<T>,
    /// Row maxima of the affinity, `[HW]`.
    pub affinity_vector: Tensor<T>,
    /// Softmax of the affinity vector reshaped to `[1,H,W]`.
    pub location_map: Tensor<T>,
    /// `Ã ⊙ F_k + F_k`, before attention.
    pub residual: Tensor<T>,
    /// `SA(CA(residual))`, `[C,H,W]`.
    pub correlation: Tensor<T>,
}

pub struct Pct<T: Scalar> {
    pub query: Conv2d<T>,
    /// `None` when both sides share the query projection.
    pub key: Option<Conv2d<T>>,
    refine: Refine<T>,
    channels: usize,
}

impl<T: Scalar> Pct<T> {
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        channels: usize,
        shared_projection: bool,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        let query = Conv2d::new(vb, &format!("{name}.query"), channels, channels, 1, 1, 0)?;
        let key = if shared_projection {
            None
        } else {
            Some(Conv2d::new(vb, &format!("{name}.key"), channels, channels, 1, 1, 0)?)
        };
        Ok(Self {
            query,
            key,
            refine: Refine::new(vb, &format!("{name}.refine"), channels, attn)?,
            channels,
        })
    }

    fn check(&self, f: &Tensor<T>) -> Result<(usize, usize)> {
        match *f.shape() {
            [c, h, w] if c == self.channels => Ok((h, w)),
            _ => Err(shape_err(
                "pct",
                format!("expected [{},H,W], got {:?}", self.channels, f.shape()),
            )),
        }
    }

    /// Projects features to the `[C,HW]` query side.
    pub fn project_query(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.check(f)?;
        self.query.forward(f)?.reshape(&[self.channels, h * w])
    }

    /// Projects features to the `[C,HW]` reference side.
    pub fn project_key(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.check(f)?;
        self.key
            .as_ref()
            .unwrap_or(&self.query)
            .forward(f)?
            .reshape(&[self.channels, h * w])
    }

    /// PCT of current features `f_k` against reference features `f_j`.
    pub fn forward(&self, f_k: &Tensor<T>, f_j: &Tensor<T>) -> Result<PairwiseCorrelation<T>> {
        if f_k.shape() != f_j.shape() {
            return Err(shape_err("pct", format!("{:?} vs {:?}", f_k.shape(), f_j.shape())));
        }
        let q = self.project_query(f_k)?;
        let k = self.project_key(f_j)?;
        self.from_projections(f_k, &q, &k)
    }

    /// PCT given precomputed projections (`q` of image k, `k` of image j).
    pub fn from_projections(
        &self,
        f_k: &Tensor<T>,
        q: &Tensor<T>,
        k: &Tensor<T>,
    ) -> Result<PairwiseCorrelation<T>> {
        let (h, w) = self.check(f_k)?;
        let affinity = matmul(&q.t()?, k)?;
        let affinity_vector = rowmax(&affinity)?;
        let location_map = softmax_vec(&affinity_vector)?.reshape(&[1, h, w])?;
        let residual = f_k.mul(&location_map)?.add(f_k)?;
        let correlation = self.refine.forward(&residual)?;
        Ok(PairwiseCorrelation {
            affinity,
            affinity_vector,
            location_map,
            residual,
            correlation,
        })
    }
}

/// Number of depth-2 fusion layers for `pairs` stacked correlations.
pub fn fusion_layers(pairs: usize) -> usize {
    pairs.saturating_sub(1)
}

pub struct Lcm<T: Scalar> {
    pub pct: Pct<T>,
    fuse: Vec<Conv3d<T>>,
    group_size: usize,
}

impl<T: Scalar> Lcm<T> {
    pub fn new(
        vb: &mut VarBuilder<T>,
        name: &str,
        channels: usize,
        group_size: usize,
        shared_projection: bool,
        attn: &AttentionConfig,
    ) -> Result<Self> {
        if group_size < 2 {
            return Err(Error::GroupSize {
                got: group_size,
                reason: "local branch needs at least one reference image".into(),
            });
        }
        let pct = Pct::new(vb, &format!("{name}.pct"), channels, shared_projection, attn)?;
        let layers = fusion_layers(group_size - 1);
        let fuse = (0..layers)
            .map(|i| Conv3d::new(vb, &format!("{name}.fuse{i}"), channels, channels, 2, 3))
            .collect::<Result<Vec<_>>>()?;
        assert_eq!(
            crate::gcm::final_depth(group_size - 1, &vec![2; layers]),
            Some(1),
            "fusion must collapse depth"
        );
        Ok(Self { pct, fuse, group_size })
    }

    /// Fuses the `N-1` pairwise correlations of one image into `P^k`.
    pub fn fuse(&self, correlations: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = correlations.first().ok_or(Error::Empty("no pairwise correlations"))?;
        if correlations.len() != self.group_size - 1 {
            return Err(Error::GroupSize {
                got: correlations.len() + 1,
                reason: format!("local branch was built for {} images", self.group_size),
            });
        }
        if correlations.len() == 1 {
            return Ok(first.clone());
        }
        let s = first.shape().to_vec();
        let mut x = stack(correlations, 1)?;
        for conv in &self.fuse {
            x = conv.forward(&x)?.relu()?;
        }
        x.reshape(&s)
    }

    /// Local inter features `P^k` of image `k` (0-based) in `group`.
    pub fn forward(&self, group: &[Tensor<T>], k: usize) -> Result<Tensor<T>> {
        if k >= group.len() {
            return Err(Error::GroupSize {
                got: group.len(),
                reason: format!("image index {k} out of range"),
            });
        }
        let pairs = (0..group.len())
            .filter(|&j| j != k)
            .map(|j| Ok(self.pct.forward(&group[k], &group[j])?.correlation))
            .collect::<Result<Vec<_>>>()?;
        self.fuse(&pairs)
    }

    /// `P^k` for every image, reusing each image's projections.
    pub fn forward_all(&self, group: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let queries = group
            .iter()
            .map(|f| self.pct.project_query(f))
            .collect::<Result<Vec<_>>>()?;
        let keys = if self.pct.key.is_some() {
            group
                .iter()
                .map(|f| self.pct.project_key(f))
                .collect::<Result<Vec<_>>>()?
        } else {
            queries.clone()
        };
        (0..group.len())
            .map(|k| {
                let pairs = (0..group.len())
                    .filter(|&j| j != k)
                    .map(|j| Ok(self.pct.from_projections(&group[k], &queries[k], &keys[j])?.correlation))
                    .collect::<Result<Vec<_>>>()?;
                self.fuse(&pairs)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize, c: usize, hw: usize, seed: usize) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|i| {
                let v = (0..c * hw * hw)
                    .map(|j| (((j + 3) * (i + 5 + seed) * 7919 % 101) as f64 - 50.0) / 60.0)
                    .collect();
                Tensor::new(v, &[c, hw, hw]).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_features_give_uniform_map_and_zero_output() {
        let mut vb = VarBuilder::<f32>::random(9);
        let pct = Pct::new(&mut vb, "pct", 4, false, &AttentionConfig::default()).unwrap();
        for (_, p) in vb.finish().unwrap() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let z = Tensor::<f32>::zeros(&[4, 3, 3]).unwrap();
        let out = pct.forward(&z, &z).unwrap();
        assert!(out.affinity.to_vec().iter().all(|&v| v == 0.0));
        assert!(out.location_map.to_vec().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-7));
        assert!(out.correlation.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn location_map_is_a_distribution() {
        let mut vb = VarBuilder::<f64>::random(2);
        let pct = Pct::new(&mut vb, "pct", 4, false, &AttentionConfig::default()).unwrap();
        let f = feats(2, 4, 3, 0);
        let out = pct.forward(&f[0], &f[1]).unwrap();
        let m = out.location_map.to_vec();
        assert!(m.iter().all(|&v| v > 0.0));
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_dominates_non_negative_input() {
        let mut vb = VarBuilder::<f64>::random(2);
        let pct = Pct::new(&mut vb, "pct", 4, true, &AttentionConfig::default()).unwrap();
        let f: Vec<_> = feats(2, 4, 3, 1).into_iter().map(|t| t.relu().unwrap()).collect();
        let out = pct.forward(&f[0], &f[1]).unwrap();
        let x = f[0].to_vec();
        assert!(out.residual.to_vec().iter().zip(&x).all(|(r, x)| r >= x));
    }

    #[test]
    fn two_image_group_is_a_single_pct() {
        let mut vb = VarBuilder::<f64>::random(5);
        let lcm = Lcm::new(&mut vb, "lcm", 4, 2, false, &AttentionConfig::default()).unwrap();
        let f = feats(2, 4, 3, 2);
        let p = lcm.forward(&f, 0).unwrap();
        let direct = lcm.pct.forward(&f[0], &f[1]).unwrap().correlation;
        assert_eq!(p.to_vec(), direct.to_vec());
    }

    #[test]
    fn identical_images_give_identical_local_features() {
        let mut vb = VarBuilder::<f64>::random(6);
        let lcm = Lcm::new(&mut vb, "lcm", 4, 3, false, &AttentionConfig::default()).unwrap();
        let one = feats(1, 4, 3, 3).remove(0);
        let group = vec![one.clone(), one.clone(), one];
        let all = lcm.forward_all(&group).unwrap();
        assert_eq!(all[0].to_vec(), all[1].to_vec());
        assert_eq!(all[1].to_vec(), all[2].to_vec());
    }

    #[test]
    fn forward_all_matches_manual_composition() {
        let mut vb = VarBuilder::<f64>::random(7);
        let lcm = Lcm::new(&mut vb, "lcm", 4, 5, false, &AttentionConfig::default()).unwrap();
        let group = feats(5, 4, 3, 4);
        let all = lcm.forward_all(&group).unwrap();
        for k in 0..5 {
            let pairs: Vec<_> = (0..5)
                .filter(|&j| j != k)
                .map(|j| lcm.pct.forward(&group[k], &group[j]).unwrap().correlation)
                .collect();
            let manual = lcm.fuse(&pairs).unwrap();
            assert_eq!(manual.shape(), &[4, 3, 3]);
            let a = all[k].to_vec();
            let b = manual.to_vec();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
            assert_eq!(lcm.forward(&group, k).unwrap().to_vec(), b);
        }
        assert!(lcm.forward(&group, 5).is_err());
    }

    #[test]
    fn fusion_layer_counts() {
        assert_eq!(fusion_layers(1), 0);
        assert_eq!(fusion_layers(2), 1);
        assert_eq!(fusion_layers(4), 3);
        let mut vb = VarBuilder::<f32>::random(0);
        let lcm = Lcm::new(&mut vb, "lcm", 4, 5, false, &AttentionConfig::default()).unwrap();
        let z: Vec<_> = (0..4).map(|_| Tensor::<f32>::zeros(&[4, 3, 3]).unwrap()).collect();
        assert!(lcm.fuse(&z).unwrap().to_vec().iter().all(|&v| v == 0.0));
        assert!(lcm.fuse(&z[..3]).is_err());
        assert!(lcm.fuse(&[]).is_err());
    }
}
