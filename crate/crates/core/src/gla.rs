//! Aggregation of global (`G`) and local (`P^k`) correspondence into the
//! inter features `F_ie^k`.

use crate::attention::{AttentionConfig, Refine};
use crate::error::{shape_err, Result};
use crate::nn::{Conv3d, VarBuilder};
use crate::tensor::{stack, Scalar, Tensor};

pub struct Gla<T: Scalar> {
    /// `None` when only one branch feeds the aggregation.
    merge: Option<Conv3d<T>>,
    refine: Refine<T>,
}

impl<T: Scalar> Gla<T> {
    /// Depth-2 3D conv over `[G, P]`, ReLU, then CA and SA.
    pub fn new(vb: &mut VarBuilder<T>, name: &str, channels: usize, attn: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            merge: Some(Conv3d::new(vb, &format!("{name}.merge"), channels, channels, 2, 3)?),
            refine: Refine::new(vb, &format!("{name}.refine"), channels, attn)?,
        })
    }

    /// Attention only, for a single surviving branch.
    pub fn attend_only(vb: &mut VarBuilder<T>, name: &str, channels: usize, attn: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            merge: None,
            refine: Refine::new(vb, &format!("{name}.refine"), channels, attn)?,
        })
    }

    pub fn forward(&self, g: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
        let merge = self
            .merge
            .as_ref()
            .ok_or_else(|| shape_err("gla", "built without the merge layer; use forward_single"))?;
        if g.shape() != p.shape() || g.rank() != 3 {
            return Err(shape_err("gla", format!("{:?} vs {:?}", g.shape(), p.shape())));
        }
        let s = g.shape().to_vec();
        let merged = merge.forward(&stack(&[g.clone(), p.clone()], 1)?)?.relu()?;
        self.refine.forward(&merged.reshape(&s)?)
    }

    pub fn forward_single(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.refine.forward(x)
    }
}
