//! Group binary cross-entropy.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{bce_loss, Scalar, Tensor};

/// Mean over the group of each map's mean per-pixel BCE against its mask.
pub fn bce_group_loss<T: Scalar>(maps: &[Tensor<T>], gts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if maps.is_empty() {
        return Err(Error::Empty("no maps to supervise"));
    }
    if maps.len() != gts.len() {
        return Err(shape_err("bce_group_loss", format!("{} maps vs {} masks", maps.len(), gts.len())));
    }
    let mut total = bce_loss(&maps[0], &gts[0])?;
    for (m, t) in maps.iter().zip(gts).skip(1) {
        total = total.add(&bce_loss(m, t)?)?;
    }
    total.mul_scalar(T::of(1.0 / maps.len() as f64))
}
