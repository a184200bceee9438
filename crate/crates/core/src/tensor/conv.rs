//! Convolution kernels lowered to GEMM through im2col / col2im.
//!
//! Every convolution here is a cross-correlation (no kernel flip). The depth
//! axis of 3D convolution always has stride 1 and no padding.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kd * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.od * self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kd == 1 && self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Calls `f(row, col, src)` for every in-bounds (patch entry, output
    /// location) pair, where `src` is the flat input index.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = *self;
        let plane = g.oh * g.ow;
        for c in 0..g.c {
            for dz in 0..g.kd {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let row = ((c * g.kd + dz) * g.kh + ky) * g.kw + kx;
                        for oz in 0..g.od {
                            let iz = oz + dz;
                            let in_plane = (c * g.d + iz) * g.h;
                            for oy in 0..g.oh {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                let in_row = (in_plane + iy as usize) * g.w;
                                let col_base = oz * plane + oy * g.ow;
                                for ox in 0..g.ow {
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    f(row, col_base + ox, in_row + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut out = vec![T::zero(); self.rows() * cols];
        self.for_each_tap(|r, c, s| out[r * cols + c] = x[s]);
        out
    }

    fn col2im<T: Scalar>(&self, col: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut out = vec![T::zero(); self.c * self.d * self.h * self.w];
        self.for_each_tap(|r, c, s| out[s] += col[r * cols + c]);
        out
    }
}

fn out_extent(op: &'static str, n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if k > padded || (padded - k) % stride != 0 {
        return Err(shape_err(
            op,
            format!("extent {n} with kernel {k}, stride {stride}, pad {pad} is not integral"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    let per = out.len() / bias.len();
    for (chunk, &b) in out.chunks_mut(per).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(g: &[T], channels: usize) -> Vec<T> {
    let per = g.len() / channels;
    g.chunks(per)
        .map(|ch| T::of(ch.iter().fold(0.0f64, |a, v| a + v.as_f64())))
        .collect()
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, c_out: usize) -> Result<()> {
    if bias.shape() != [c_out] {
        return Err(shape_err(op, format!("bias {:?} for {c_out} channels", bias.shape())));
    }
    Ok(())
}

/// Shared forward/backward for 2D and 3D convolution once the input has been
/// described by a [`Geometry`].
fn conv_impl<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    geo: Geometry,
    c_out: usize,
    out_shape: Vec<usize>,
) -> Result<Tensor<T>> {
    let (k, p) = (geo.rows(), geo.cols());
    let mut out = vec![T::zero(); c_out * p];
    {
        let xd = x.data();
        if geo.is_pointwise() {
            T::gemm(false, false, c_out, k, p, &w.data(), &xd, T::zero(), &mut out);
        } else {
            let col = geo.im2col(&xd);
            T::gemm(false, false, c_out, k, p, &w.data(), &col, T::zero(), &mut out);
        }
    }
    add_bias(&mut out, &bias.data());
    Tensor::from_op(
        op,
        out,
        out_shape,
        vec![x.clone(), w.clone(), bias.clone()],
        move |g: &[T], parents: &[Tensor<T>], _: &[T]| {
            let (x, w, b) = (&parents[0], &parents[1], &parents[2]);
            let xd = x.data();
            let col_owned;
            let col: &[T] = if geo.is_pointwise() {
                &xd
            } else {
                col_owned = geo.im2col(&xd);
                &col_owned
            };
            let gw = w.requires_grad().then(|| {
                let mut gw = vec![T::zero(); c_out * k];
                T::gemm(false, true, c_out, p, k, g, col, T::zero(), &mut gw);
                gw
            });
            let gx = x.requires_grad().then(|| {
                let mut gcol = vec![T::zero(); k * p];
                T::gemm(true, false, k, c_out, p, &w.data(), g, T::zero(), &mut gcol);
                if geo.is_pointwise() {
                    gcol
                } else {
                    geo.col2im(&gcol)
                }
            });
            let gb = b.requires_grad().then(|| bias_grad(g, c_out));
            vec![gx, gw, gb]
        },
    )
}

/// 2D convolution of `x[C_in,H,W]` with `w[C_out,C_in,kh,kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (&[c, h, wd], &[c_out, c_in, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(shape_err(
            "conv2d",
            format!("input {:?}, weight {:?}", x.shape(), w.shape()),
        ));
    };
    if c != c_in {
        return Err(shape_err("conv2d", format!("input has {c} channels, weight expects {c_in}")));
    }
    if stride == 0 {
        return Err(shape_err("conv2d", "stride must be positive"));
    }
    check_bias("conv2d", bias, c_out)?;
    let oh = out_extent("conv2d", h, kh, stride, pad)?;
    let ow = out_extent("conv2d", wd, kw, stride, pad)?;
    let geo = Geometry { c, d: 1, h, w: wd, kd: 1, kh, kw, stride, pad, od: 1, oh, ow };
    conv_impl("conv2d", x, w, bias, geo, c_out, vec![c_out, oh, ow])
}

/// 3D convolution of `x[C_in,D,H,W]` with `w[C_out,C_in,kd,kh,kw]`. The depth
/// axis is unpadded (output depth `D - kd + 1`); spatial axes use stride 1
/// and `spatial_pad` zero padding.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    spatial_pad: usize,
) -> Result<Tensor<T>> {
    let (&[c, d, h, wd], &[c_out, c_in, kd, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(shape_err(
            "conv3d",
            format!("input {:?}, weight {:?}", x.shape(), w.shape()),
        ));
    };
    if c != c_in {
        return Err(shape_err("conv3d", format!("input has {c} channels, weight expects {c_in}")));
    }
    if kd > d || kd == 0 {
        return Err(shape_err("conv3d", format!("kernel depth {kd} exceeds input depth {d}")));
    }
    check_bias("conv3d", bias, c_out)?;
    let od = d - kd + 1;
    let oh = out_extent("conv3d", h, kh, 1, spatial_pad)?;
    let ow = out_extent("conv3d", wd, kw, 1, spatial_pad)?;
    let geo = Geometry { c, d, h, w: wd, kd, kh, kw, stride: 1, pad: spatial_pad, od, oh, ow };
    conv_impl("conv3d", x, w, bias, geo, c_out, vec![c_out, od, oh, ow])
}

/// Transposed 2D convolution of `x[C_in,H,W]` with `w[C_in,C_out,k,k]`,
/// producing `[C_out, (H-1)*stride - 2*pad + k, ...]`. With `k = 4`,
/// `stride = 2`, `pad = 1` the spatial extents double exactly.
pub fn transposed_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (&[c_in, h, wd], &[wc_in, c_out, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(shape_err(
            "transposed_conv2d",
            format!("input {:?}, weight {:?}", x.shape(), w.shape()),
        ));
    };
    if c_in != wc_in {
        return Err(shape_err(
            "transposed_conv2d",
            format!("input has {c_in} channels, weight expects {wc_in}"),
        ));
    }
    check_bias("transposed_conv2d", bias, c_out)?;
    let grow = |n: usize, k: usize| ((n - 1) * stride + k).checked_sub(2 * pad);
    let (Some(oh), Some(ow)) = (grow(h, kh), grow(wd, kw)) else {
        return Err(shape_err("transposed_conv2d", "padding exceeds output extent"));
    };
    if stride == 0 || oh == 0 || ow == 0 {
        return Err(shape_err("transposed_conv2d", "empty output"));
    }
    // The output plays the role of the input of an ordinary convolution whose
    // output grid is the h x w input.
    let geo = Geometry { c: c_out, d: 1, h: oh, w: ow, kd: 1, kh, kw, stride, pad, od: 1, oh: h, ow: wd };
    let (rows, p) = (geo.rows(), h * wd);
    let mut out = {
        let mut cols = vec![T::zero(); rows * p];
        T::gemm(true, false, rows, c_in, p, &w.data(), &x.data(), T::zero(), &mut cols);
        geo.col2im(&cols)
    };
    add_bias(&mut out, &bias.data());
    Tensor::from_op(
        "transposed_conv2d",
        out,
        vec![c_out, oh, ow],
        vec![x.clone(), w.clone(), bias.clone()],
        move |g: &[T], parents: &[Tensor<T>], _: &[T]| {
            let (x, w, b) = (&parents[0], &parents[1], &parents[2]);
            let gcols = geo.im2col(g);
            let gx = x.requires_grad().then(|| {
                let mut gx = vec![T::zero(); c_in * p];
                T::gemm(false, false, c_in, rows, p, &w.data(), &gcols, T::zero(), &mut gx);
                gx
            });
            let gw = w.requires_grad().then(|| {
                let mut gw = vec![T::zero(); c_in * rows];
                T::gemm(false, true, c_in, p, rows, &x.data(), &gcols, T::zero(), &mut gw);
                gw
            });
            let gb = b.requires_grad().then(|| bias_grad(g, c_out));
            vec![gx, gw, gb]
        },
    )
}
