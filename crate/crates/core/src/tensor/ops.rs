use super::{strides, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (a, b) = (pad(a), pad(b));
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For each element of `out_shape`, the flat index of the broadcast source
/// element in a tensor of shape `in_shape`.
fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut padded = vec![1; rank - in_shape.len()];
    padded.extend_from_slice(in_shape);
    let in_strides = strides(&padded);
    let eff: Vec<usize> = (0..rank)
        .map(|d| if padded[d] == 1 { 0 } else { in_strides[d] })
        .collect();
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn reduce_to<T: Scalar>(grad: &[T], map: &[usize], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for (g, &i) in grad.iter().zip(map) {
        out[i] += *g;
    }
    out
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinOp) -> Result<Tensor<T>> {
        let name = match kind {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        };
        let f = move |x: T, y: T| match kind {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
        };
        if self.shape() == other.shape() {
            let data: Vec<T> = {
                let (a, b) = (self.data(), other.data());
                a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
            };
            return Tensor::from_op(
                name,
                data,
                self.shape().to_vec(),
                vec![self.clone(), other.clone()],
                move |g: &[T], p: &[Tensor<T>], _: &[T]| match kind {
                    BinOp::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
                    BinOp::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
                    BinOp::Mul => {
                        let (a, b) = (p[0].data(), p[1].data());
                        let ga = if p[0].requires_grad() {
                            Some(g.iter().zip(b.iter()).map(|(&g, &y)| g * y).collect())
                        } else {
                            None
                        };
                        let gb = if p[1].requires_grad() {
                            Some(g.iter().zip(a.iter()).map(|(&g, &x)| g * x).collect())
                        } else {
                            None
                        };
                        vec![ga, gb]
                    }
                },
            );
        }
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            shape_err(
                name,
                format!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()),
            )
        })?;
        let ma = broadcast_map(&out_shape, self.shape());
        let mb = broadcast_map(&out_shape, other.shape());
        let data: Vec<T> = {
            let (a, b) = (self.data(), other.data());
            ma.iter().zip(&mb).map(|(&i, &j)| f(a[i], b[j])).collect()
        };
        let (na, nb) = (self.numel(), other.numel());
        Tensor::from_op(
            name,
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            move |g: &[T], p: &[Tensor<T>], _: &[T]| {
                let (ga, gb): (Vec<T>, Vec<T>) = match kind {
                    BinOp::Add => (reduce_to(g, &ma, na), reduce_to(g, &mb, nb)),
                    BinOp::Sub => {
                        let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                        (reduce_to(g, &ma, na), reduce_to(&neg, &mb, nb))
                    }
                    BinOp::Mul => {
                        let (a, b) = (p[0].data(), p[1].data());
                        let mut ga = vec![T::zero(); na];
                        let mut gb = vec![T::zero(); nb];
                        for ((&gv, &i), &j) in g.iter().zip(&ma).zip(&mb) {
                            ga[i] += gv * b[j];
                            gb[j] += gv * a[i];
                        }
                        (ga, gb)
                    }
                };
                vec![Some(ga), Some(gb)]
            },
        )
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Sub)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Mul)
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            op,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g: &[T], p: &[Tensor<T>], out: &[T]| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(out))
                        .map(|(&g, (&x, &y))| g * df(x, y))
                        .collect(),
                )]
            },
        )
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Result<Tensor<T>> {
        self.unary("mul_scalar", move |x| x * c, move |_, _| c)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self.data().iter().fold(0.0f64, |acc, v| acc + v.as_f64());
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![T::of(s)],
            vec![1],
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        self.sum()?.mul_scalar(T::of(1.0 / n as f64))
    }

    /// Same data viewed with another shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape()),
            ));
        }
        Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |g: &[T], _: &[Tensor<T>], _: &[T]| vec![Some(g.to_vec())],
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(shape_err(
                "narrow",
                format!("axis {axis} range {start}..{} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&x[base..base + len * inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let n = self.numel();
        Tensor::from_op(
            "narrow",
            data,
            out_shape,
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| {
                let mut gx = vec![T::zero(); n];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            },
        )
    }

    fn check_chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(op, format!("expected [C,H,W], got {:?}", self.shape()))),
        }
    }

    /// Per-channel spatial mean: `[C,H,W] -> [C,1,1]`.
    pub fn spatial_mean(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.check_chw("spatial_mean")?;
        let hw = h * w;
        let data: Vec<T> = {
            let x = self.data();
            x.chunks(hw)
                .map(|ch| T::of(ch.iter().fold(0.0, |a, v| a + v.as_f64()) / hw as f64))
                .collect()
        };
        Tensor::from_op(
            "spatial_mean",
            data,
            vec![c, 1, 1],
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| {
                let inv = T::of(1.0 / hw as f64);
                vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect())]
            },
        )
    }

    /// Mean over channels: `[C,H,W] -> [1,H,W]`.
    pub fn channel_mean(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.check_chw("channel_mean")?;
        let hw = h * w;
        let data: Vec<T> = {
            let x = self.data();
            (0..hw)
                .map(|i| {
                    let s = (0..c).fold(0.0f64, |a, ch| a + x[ch * hw + i].as_f64());
                    T::of(s / c as f64)
                })
                .collect()
        };
        Tensor::from_op(
            "channel_mean",
            data,
            vec![1, h, w],
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| {
                let inv = T::of(1.0 / c as f64);
                let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                vec![Some(row.repeat(c))]
            },
        )
    }

    /// Max over channels: `[C,H,W] -> [1,H,W]`. The gradient goes to the
    /// first maximal channel at each location.
    pub fn channel_max(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.check_chw("channel_max")?;
        let hw = h * w;
        let (data, argmax): (Vec<T>, Vec<usize>) = {
            let x = self.data();
            (0..hw)
                .map(|i| {
                    let mut best = 0;
                    for ch in 1..c {
                        if x[ch * hw + i] > x[best * hw + i] {
                            best = ch;
                        }
                    }
                    (x[best * hw + i], best)
                })
                .unzip()
        };
        let n = self.numel();
        Tensor::from_op(
            "channel_max",
            data,
            vec![1, h, w],
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| {
                let mut gx = vec![T::zero(); n];
                for (i, (&gv, &ch)) in g.iter().zip(&argmax).enumerate() {
                    gx[ch * hw + i] = gv;
                }
                vec![Some(gx)]
            },
        )
    }
}

/// Elementwise `alpha * b + (1 - alpha) * a` for equally shaped operands.
///
/// Evaluated from whichever endpoint is nearer, so `alpha = 0` gives `a`
/// exactly, `alpha = 1` gives `b` exactly, and `a == b` gives `a` exactly.
pub fn lerp<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() || a.shape() != alpha.shape() {
        return Err(shape_err(
            "lerp",
            format!("{:?}, {:?}, {:?}", a.shape(), b.shape(), alpha.shape()),
        ));
    }
    let half = T::of(0.5);
    let data: Vec<T> = {
        let (x, y, t) = (a.data(), b.data(), alpha.data());
        x.iter()
            .zip(y.iter())
            .zip(t.iter())
            .map(|((&x, &y), &t)| {
                if t < half {
                    x + t * (y - x)
                } else {
                    y - (T::one() - t) * (y - x)
                }
            })
            .collect()
    };
    Tensor::from_op(
        "lerp",
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone(), alpha.clone()],
        |g: &[T], p: &[Tensor<T>], _: &[T]| {
            let (x, y, t) = (p[0].data(), p[1].data(), p[2].data());
            let ga = g.iter().zip(t.iter()).map(|(&g, &t)| g * (T::one() - t)).collect();
            let gb = g.iter().zip(t.iter()).map(|(&g, &t)| g * t).collect();
            let gt = g
                .iter()
                .zip(x.iter().zip(y.iter()))
                .map(|(&g, (&x, &y))| g * (y - x))
                .collect();
            vec![Some(ga), Some(gb), Some(gt)]
        },
    )
}

/// Concatenates tensors of equal rank along `axis`; other extents must match.
pub fn concat<T: Scalar>(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("concat of zero tensors"))?;
    let base = first.shape().to_vec();
    if axis >= base.len() {
        return Err(shape_err("concat", format!("axis {axis} for rank {}", base.len())));
    }
    for p in parts {
        let s = p.shape();
        let ok = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(shape_err("concat", format!("{base:?} vs {s:?} on axis {axis}")));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    {
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (g, &e) in guards.iter().zip(&extents) {
                data.extend_from_slice(&g[o * e * inner..(o + 1) * e * inner]);
            }
        }
    }
    let mut shape = base;
    shape[axis] = total;
    Tensor::from_op(
        "concat",
        data,
        shape,
        parts.to_vec(),
        move |g: &[T], p: &[Tensor<T>], _: &[T]| {
            let mut grads: Vec<Vec<T>> = extents
                .iter()
                .map(|&e| Vec::with_capacity(outer * e * inner))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    gp.extend_from_slice(&g[off..off + e * inner]);
                    off += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .map(|(gp, t)| t.requires_grad().then_some(gp))
                .collect()
        },
    )
}

/// Stacks equally shaped tensors along a new axis inserted at `axis`.
pub fn stack<T: Scalar>(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("stack of zero tensors"))?;
    let base = first.shape().to_vec();
    if axis > base.len() {
        return Err(shape_err("stack", format!("axis {axis} for rank {}", base.len())));
    }
    let mut expanded = base.clone();
    expanded.insert(axis, 1);
    let views = parts
        .iter()
        .map(|p| {
            if p.shape() != base.as_slice() {
                return Err(shape_err("stack", format!("{base:?} vs {:?}", p.shape())));
            }
            p.reshape(&expanded)
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&views, axis)
}

/// Mean binary cross-entropy between probabilities and binary targets, with
/// predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "bce_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    const LO: f64 = 1e-7;
    const HI: f64 = 1.0 - 1e-7;
    let n = pred.numel();
    let total = {
        let (m, t) = (pred.data(), target.data());
        m.iter().zip(t.iter()).fold(0.0f64, |acc, (&m, &t)| {
            let m = m.as_f64().clamp(LO, HI);
            let t = t.as_f64();
            acc - (t * m.ln() + (1.0 - t) * (1.0 - m).ln())
        })
    };
    Tensor::from_op(
        "bce_loss",
        vec![T::of(total / n as f64)],
        vec![1],
        vec![pred.clone(), target.clone()],
        move |g: &[T], p: &[Tensor<T>], _: &[T]| {
            let (m, t) = (p[0].data(), p[1].data());
            let scale = g[0].as_f64() / n as f64;
            let gm = m
                .iter()
                .zip(t.iter())
                .map(|(&m, &t)| {
                    let mv = m.as_f64();
                    if !(LO..=HI).contains(&mv) {
                        return T::zero();
                    }
                    let tv = t.as_f64();
                    T::of(scale * (mv - tv) / (mv * (1.0 - mv)))
                })
                .collect();
            vec![Some(gm), None]
        },
    )
}
