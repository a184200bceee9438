//! Backbone and whole-model wiring: intra features, global and local
//! correspondence, aggregation, adaptive fusion and decoding.

use serde::{Deserialize, Serialize};

use crate::aewf::{levels_for, Aewf, Decoder};
use crate::attention::AttentionConfig;
use crate::error::{shape_err, Error, Result};
use crate::gcm::{stack_group, Gcm};
use crate::gla::Gla;
use crate::lcm::Lcm;
use crate::nn::{snapshot, Conv2d, NamedParam, VarBuilder};
use crate::tensor::{no_grad, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub group_size: usize,
    pub side: usize,
    pub channels: usize,
    /// Image-to-feature resolution ratio, `2^L`.
    pub stride: usize,
    pub disable_gcm: bool,
    pub disable_lcm: bool,
    /// Replace the 3D convolutions of the global branch by 2D ones.
    pub gcm_use_2d: bool,
    /// Required to disable both branches.
    pub single_image_baseline: bool,
    /// One 1x1 projection for both sides of the affinity.
    pub shared_projection: bool,
    pub attention: AttentionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            side: 160,
            channels: 32,
            stride: 8,
            disable_gcm: false,
            disable_lcm: false,
            gcm_use_2d: false,
            single_image_baseline: false,
            shared_projection: false,
            attention: AttentionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        levels_for(self.stride)?;
        if self.side == 0 || self.side % self.stride != 0 {
            return Err(Error::Config(format!(
                "side {} is not divisible by stride {}",
                self.side, self.stride
            )));
        }
        if self.group_size < 2 {
            return Err(Error::Config(format!("group_size {} must be at least 2", self.group_size)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        self.attention.validate(self.channels)?;
        if self.disable_gcm && self.disable_lcm && !self.single_image_baseline {
            return Err(Error::Config(
                "disabling both correspondence branches requires single_image_baseline".into(),
            ));
        }
        if self.disable_gcm && self.gcm_use_2d {
            return Err(Error::Config("gcm_use_2d has no effect with disable_gcm".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    /// Feature-map side `S / stride`.
    pub fn feature_side(&self) -> usize {
        self.side / self.stride
    }
}

/// Output channels of the backbone stages: `C / 2^(L-1-i)`, at least 8, at most `C`.
pub fn backbone_widths(channels: usize, levels: usize) -> Vec<usize> {
    (0..levels)
        .map(|i| (channels >> (levels - 1 - i)).max(8).min(channels))
        .collect()
}

/// `L` blocks of (3x3 conv, ReLU, 4x4 stride-2 conv, ReLU), shared by all images.
pub struct Backbone<T: Scalar> {
    blocks: Vec<(Conv2d<T>, Conv2d<T>)>,
    stride: usize,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, stride: usize) -> Result<Self> {
        let levels = levels_for(stride)?;
        let mut c_in = 3;
        let mut blocks = Vec::with_capacity(levels);
        for (i, c) in backbone_widths(channels, levels).into_iter().enumerate() {
            let a = Conv2d::new(vb, &format!("{name}.block{i}.conv"), c_in, c, 3, 1, 1)?;
            let b = Conv2d::new(vb, &format!("{name}.block{i}.down"), c, c, 4, 2, 1)?;
            blocks.push((a, b));
            c_in = c;
        }
        Ok(Self { blocks, stride })
    }

    /// `[3,S,S]` in `[0,1]` to intra features `[C, S/stride, S/stride]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        match *image.shape() {
            [3, h, w] if h % self.stride == 0 && w % self.stride == 0 && h > 0 && w > 0 => {}
            _ => {
                return Err(shape_err(
                    "backbone",
                    format!("expected [3,H,W] with sides divisible by {}, got {:?}", self.stride, image.shape()),
                ))
            }
        }
        let mut x = image.add_scalar(T::of(-0.5))?.mul_scalar(T::of(2.0))?;
        for (a, b) in &self.blocks {
            x = a.forward(&x)?.relu()?;
            x = b.forward(&x)?.relu()?;
        }
        Ok(x)
    }
}

/// Per-image tensors of one group forward pass.
#[derive(Clone, Debug)]
pub struct GroupOutput<T: Scalar> {
    pub intra: Vec<Tensor<T>>,
    pub inter: Vec<Tensor<T>>,
    pub fused: Vec<Tensor<T>>,
    pub maps: Vec<Tensor<T>>,
}

pub struct GlNet<T: Scalar> {
    pub config: ModelConfig,
    pub backbone: Backbone<T>,
    pub gcm: Option<Gcm<T>>,
    pub lcm: Option<Lcm<T>>,
    pub gla: Option<Gla<T>>,
    pub aewf: Aewf<T>,
    pub decoder: Decoder<T>,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> GlNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, VarBuilder::random(seed))
    }

    pub fn from_named(config: &ModelConfig, params: &[NamedParam]) -> Result<Self> {
        Self::build(config, VarBuilder::from_named(params))
    }

    fn build(config: &ModelConfig, mut vb: VarBuilder<T>) -> Result<Self> {
        config.validate()?;
        let (c, n, attn) = (config.channels, config.group_size, &config.attention);
        let backbone = Backbone::new(&mut vb, "backbone", c, config.stride)?;
        let gcm = match (config.disable_gcm, config.gcm_use_2d) {
            (true, _) => None,
            (false, false) => Some(Gcm::new(&mut vb, "gcm", c, n, attn)?),
            (false, true) => Some(Gcm::new_planar(&mut vb, "gcm", c, n, attn)?),
        };
        let lcm = if config.disable_lcm {
            None
        } else {
            Some(Lcm::new(&mut vb, "lcm", c, n, config.shared_projection, attn)?)
        };
        let gla = match (gcm.is_some(), lcm.is_some()) {
            (true, true) => Some(Gla::new(&mut vb, "gla", c, attn)?),
            (false, false) => None,
            _ => Some(Gla::attend_only(&mut vb, "gla", c, attn)?),
        };
        let aewf = Aewf::new(&mut vb, "aewf", c, attn.reduction)?;
        let decoder = Decoder::new(&mut vb, "decoder", c, config.stride)?;
        Ok(Self {
            config: config.clone(),
            backbone,
            gcm,
            lcm,
            gla,
            aewf,
            decoder,
            params: vb.finish()?,
        })
    }

    /// Parameters in construction order.
    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn named_params(&self) -> Vec<NamedParam> {
        snapshot(&self.params)
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<GlNet<U>> {
        GlNet::from_named(&self.config, &self.named_params())
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, p)| p.zero_grad());
    }

    /// Inter features from intra features; `F_ie = F_ia` with both branches off.
    pub fn inter_features(&self, intra: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let global = match &self.gcm {
            Some(gcm) => Some(gcm.forward(&stack_group(intra)?)?.global),
            None => None,
        };
        let local = match &self.lcm {
            Some(lcm) => Some(lcm.forward_all(intra)?),
            None => None,
        };
        (0..intra.len())
            .map(|k| match (&self.gla, &global, &local) {
                (Some(gla), Some(g), Some(p)) => gla.forward(g, &p[k]),
                (Some(gla), Some(g), None) => gla.forward_single(g),
                (Some(gla), None, Some(p)) => gla.forward_single(&p[k]),
                _ => Ok(intra[k].clone()),
            })
            .collect()
    }

    pub fn forward_detailed(&self, images: &[Tensor<T>]) -> Result<GroupOutput<T>> {
        if images.len() != self.config.group_size {
            return Err(Error::GroupSize {
                got: images.len(),
                reason: format!("model was built for groups of {}", self.config.group_size),
            });
        }
        let intra = images
            .iter()
            .map(|im| self.backbone.forward(im))
            .collect::<Result<Vec<_>>>()?;
        let inter = self.inter_features(&intra)?;
        let fused = intra
            .iter()
            .zip(&inter)
            .map(|(a, e)| Ok(self.aewf.forward(a, e)?.f_co))
            .collect::<Result<Vec<_>>>()?;
        let maps = fused
            .iter()
            .map(|f| self.decoder.forward(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupOutput { intra, inter, fused, maps })
    }

    /// One `[1,S,S]` co-saliency map per image, in input order.
    pub fn forward_group(&self, images: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(self.forward_detailed(images)?.maps)
    }

    /// Predicts a group of any size `>= 2` without recording gradients.
    /// Groups of a different size than the model's are covered by cyclic
    /// windows of `group_size` consecutive images; each image takes its map
    /// from the first window that contains it.
    pub fn predict(&self, images: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let m = images.len();
        if m < 2 {
            return Err(Error::GroupSize {
                got: m,
                reason: "a group needs at least two images".into(),
            });
        }
        let n = self.config.group_size;
        no_grad(|| {
            if m == n {
                return self.forward_group(images).map(|v| v.into_iter().map(|t| t.detach()).collect());
            }
            let mut out: Vec<Option<Tensor<T>>> = vec![None; m];
            for start in (0..m).step_by(n) {
                let idx: Vec<usize> = (start..start + n).map(|i| i % m).collect();
                let window: Vec<Tensor<T>> = idx.iter().map(|&i| images[i].clone()).collect();
                for (&i, map) in idx.iter().zip(self.forward_group(&window)?) {
                    out[i].get_or_insert_with(|| map.detach());
                }
            }
            Ok(out.into_iter().map(|t| t.expect("every image is covered")).collect())
        })
    }
}
