use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(shape_err(op, format!("expected a matrix, got {:?}", t.shape()))),
    }
}

/// Matrix product `a[m,n] * b[n,p]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(shape_err(
            "matmul",
            format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(false, false, m, k, n, &a.data(), &b.data(), T::zero(), &mut out);
    Tensor::from_op(
        "matmul",
        out,
        vec![m, n],
        vec![a.clone(), b.clone()],
        move |g: &[T], p: &[Tensor<T>], _: &[T]| {
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(false, true, m, n, k, g, &p[1].data(), T::zero(), &mut ga);
                ga
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(true, false, k, m, n, &p[0].data(), g, T::zero(), &mut gb);
                gb
            });
            vec![ga, gb]
        },
    )
}

impl<T: Scalar> Tensor<T> {
    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Tensor<T>> {
        let (m, n) = dims2(self, "transpose")?;
        let transpose = move |x: &[T], rows: usize, cols: usize| {
            let mut out = vec![T::zero(); rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j * rows + i] = x[i * cols + j];
                }
            }
            out
        };
        let data = transpose(&self.data(), m, n);
        Tensor::from_op(
            "transpose",
            data,
            vec![n, m],
            vec![self.clone()],
            move |g: &[T], _: &[Tensor<T>], _: &[T]| vec![Some(transpose(g, n, m))],
        )
    }
}

/// Softmax of a vector, computed with max subtraction.
pub fn softmax_vec<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 1 {
        return Err(shape_err("softmax", format!("expected a vector, got {:?}", v.shape())));
    }
    if v.numel() == 0 {
        return Err(Error::Empty("softmax of an empty vector"));
    }
    let out: Vec<T> = {
        let x = v.data();
        let max = x.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let e: Vec<f64> = x.iter().map(|&xi| (xi - max).as_f64().exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|ei| T::of(ei / z)).collect()
    };
    let n = v.numel();
    Tensor::from_op(
        "softmax",
        out,
        vec![n],
        vec![v.clone()],
        |g: &[T], _: &[Tensor<T>], y: &[T]| {
            let dot = g.iter().zip(y).fold(T::zero(), |a, (&g, &y)| a + g * y);
            vec![Some(g.iter().zip(y).map(|(&g, &y)| y * (g - dot)).collect())]
        },
    )
}

/// Row-wise maximum of a matrix. The gradient of each row goes to its first
/// maximal entry.
pub fn rowmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2(a, "rowmax")?;
    if m == 0 || n == 0 {
        return Err(Error::Empty("rowmax of an empty matrix"));
    }
    let (vals, idx): (Vec<T>, Vec<usize>) = {
        let x = a.data();
        x.chunks(n)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                (row[best], best)
            })
            .unzip()
    };
    Tensor::from_op(
        "rowmax",
        vals,
        vec![m],
        vec![a.clone()],
        move |g: &[T], _: &[Tensor<T>], _: &[T]| {
            let mut ga = vec![T::zero(); m * n];
            for (i, (&gv, &j)) in g.iter().zip(&idx).enumerate() {
                ga[i * n + j] = gv;
            }
            vec![Some(ga)]
        },
    )
}
