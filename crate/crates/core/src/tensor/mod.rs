//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle to an immutable node holding a row-major
//! buffer. Operations on tensors that require gradients record their inputs
//! and a backward closure; [`Tensor::backward`] replays the recorded graph in
//! reverse creation order. Node ids are handed out monotonically, so sorting
//! reachable nodes by id gives a valid topological order.
//!
//! The engine is generic over [`Scalar`] so that the same model code can run
//! in `f32` (training) and `f64` (finite-difference reference evaluations).

mod conv;
mod linalg;
mod ops;

use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::{conv2d, conv3d, transposed_conv2d};
pub use linalg::{matmul, rowmax, softmax_vec};
pub use ops::{bce_loss, concat, lerp, stack};

/// Element type of a tensor.
pub trait Scalar:
    Float
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
    /// `op(a)` is `m x k` and `op(b)` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

fn gemm_strides(t: bool, rows: usize, cols: usize) -> (isize, isize) {
    // (row stride, col stride) of op(x) when x is stored row-major.
    if t {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                ta: bool,
                tb: bool,
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(ta, m, k);
                let (rsb, csb) = gemm_strides(tb, k, n);
                // SAFETY: bounds asserted above; strides describe the row-major
                // (optionally transposed) layout of each buffer.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations, as for inference.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule for one recorded operation. Returns one optional gradient
/// per parent, in parent order; `None` means "no contribution".
pub(crate) trait GradFn<T: Scalar>: Send + Sync {
    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], out: &[T]) -> Vec<Option<Vec<T>>>;
}

impl<T: Scalar, F> GradFn<T> for F
where
    F: Fn(&[T], &[Tensor<T>], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync,
{
    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], out: &[T]) -> Vec<Option<Vec<T>>> {
        self(grad_out, parents, out)
    }
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    grad_fn: Option<Box<dyn GradFn<T>>>,
    op: &'static str,
}

/// Shared handle to a node of the computation graph.
pub struct Tensor<T: Scalar = f32>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.0.op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_rank(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 5 {
        return Err(crate::error::shape_err(
            "tensor",
            format!("rank must be 1..=5, got {shape:?}"),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: &'static str) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            parents: Vec::new(),
            grad_fn: None,
            op,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_rank(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(crate::error::shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self::leaf(data, shape.to_vec(), false, "constant"))
    }

    /// Leaf tensor that accumulates gradients (a parameter or probed input).
    pub fn variable(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        let node = Arc::into_inner(t.0).expect("fresh tensor is uniquely owned");
        Ok(Self::leaf(
            node.data.into_inner().expect("fresh lock"),
            node.shape,
            true,
            "variable",
        ))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        Self::new(vec![v; shape.iter().product()], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(vec![v], vec![1], false, "constant")
    }

    pub fn from_f32(data: &[f32], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::of(v as f64)).collect(), shape)
    }

    /// Builds the output of an operation. Records `grad_fn` only when gradient
    /// tracking is enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        grad_fn: impl GradFn<T> + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        check_rank(&shape)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Ok(Self::leaf(data, shape, false, op));
        }
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad: true,
            parents,
            grad_fn: Some(Box::new(grad_fn)),
            op,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor lock poisoned")
    }

    /// Mutable access for optimizers and checkpoint loading. Only meaningful
    /// on leaves; graph nodes built from this tensor keep their old values.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.0.data.write().expect("tensor lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data().iter().map(|v| v.as_f64() as f32).collect()
    }

    pub fn item(&self) -> T {
        self.data()[0]
    }

    /// Accumulated gradient, or `None` if nothing has flowed into this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Accumulated gradient with missing entries reported as zeros.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Detached copy with the same data, converted to another scalar type.
    pub fn cast<U: Scalar>(&self, requires_grad: bool) -> Tensor<U> {
        let data: Vec<U> = self.data().iter().map(|v| U::of(v.as_f64())).collect();
        Tensor::<U>::leaf(data, self.0.shape.clone(), requires_grad, "variable")
    }

    /// Detached constant copy.
    pub fn detach(&self) -> Tensor<T> {
        Self::leaf(self.to_vec(), self.0.shape.clone(), false, "constant")
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Propagates d(self)/d(leaf) into every reachable leaf that requires a
    /// gradient. Gradients accumulate; callers zero them between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss {
                numel: self.numel(),
            });
        }
        if !self.requires_grad() {
            return Err(Error::NoGraph);
        }
        let tape = Tape::record(self);
        self.accumulate_grad(vec![T::one()]);
        for node in &tape.nodes {
            let Some(grad_fn) = node.0.grad_fn.as_ref() else {
                continue;
            };
            let Some(g) = node.0.grad.lock().expect("grad lock poisoned").take() else {
                continue;
            };
            let out = node.data();
            let contributions = grad_fn.backward(&g, &node.0.parents, &out);
            debug_assert_eq!(contributions.len(), node.0.parents.len());
            for (parent, contrib) in node.0.parents.iter().zip(contributions) {
                if let Some(c) = contrib {
                    if parent.requires_grad() {
                        debug_assert_eq!(c.len(), parent.numel(), "grad of {}", node.0.op);
                        parent.accumulate_grad(c);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Recorded operations reachable from a loss, in reverse topological order
/// (each node precedes every node that produced one of its inputs).
pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn record(root: &Tensor<T>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.0.id) {
                continue;
            }
            stack.extend(t.0.parents.iter().cloned());
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in execution (forward) order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().rev().map(|n| n.0.op).collect()
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let x = Tensor::<f32>::variable(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let x = Tensor::<f32>::variable(vec![1.0, 2.0], &[2]).unwrap();
        let unused = Tensor::<f32>::variable(vec![3.0], &[1]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert!(unused.grad().is_none());
        assert_eq!(unused.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::<f32>::variable(vec![1.0], &[1]).unwrap();
        x.mul_scalar(3.0).unwrap().sum().unwrap().backward().unwrap();
        x.mul_scalar(3.0).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_constant_losses() {
        let x = Tensor::<f32>::variable(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.relu().unwrap().backward(), Err(Error::NonScalarLoss { .. })));
        let c = Tensor::<f32>::scalar(1.0);
        assert!(matches!(c.backward(), Err(Error::NoGraph)));
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let x = Tensor::<f32>::variable(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.relu().unwrap();
        let z = y.mul(&x).unwrap().sum().unwrap();
        let tape = Tape::record(&z);
        assert_eq!(tape.ops(), vec!["variable", "relu", "mul", "sum"]);
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::<f32>::variable(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.mul_scalar(2.0).unwrap());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn rank_limits_are_enforced() {
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::new(vec![1.0; 3], &[2, 2]).is_err());
    }
}
