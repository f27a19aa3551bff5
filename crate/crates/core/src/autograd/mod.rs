//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The engine records every operation on a [`Tape`] and replays the recorded
//! backward closures in reverse order. Tensors are row-major and most
//! operations assume the `(N, C, H, W)` layout used by the network.
//! Everything is generic over [`Scalar`] so the same graph can run in `f32`
//! for training and in `f64` for reference checks.

mod conv;
mod linalg;
mod norm;
mod ops;
mod tape;

pub use conv::{conv2d, max_pool2x2, upsample_bilinear2x};
pub use linalg::{bmm, channel_conv1d, concat_channels, reshape, softmax_last};
pub use norm::{batch_norm2d, BatchStats};
pub use ops::{
    add, add_scalar, div, max_channels, mean_channels, mean_spatial, mul, relu, scale, sigmoid,
    square, sub, sum_all,
};
pub use tape::{Gradients, Tape, Var};

use std::fmt::Debug;

/// Floating-point element type usable by the engine.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::MulAssign
    + 'static
{
    /// `c = alpha * a·b + beta * c` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices
    /// of the given sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix product of contiguous buffers: `c = a(m×k)·b(k×n) + beta·c`.
/// Transposition flags reinterpret the stored operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_into<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths match the strides chosen above.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
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

/// Strided product `c = a·b + beta·c` over sub-matrices of larger
/// buffers. Strides are `(row, column)` element steps, all positive.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    rsc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        assert!(k != 0 || beta == T::one(), "empty inner dimension");
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the largest index each view touches is checked above and
    // `c` is borrowed mutably, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dimensions padded on the left to rank 4.
    pub fn dims4(&self) -> [usize; 4] {
        dims4(&self.shape)
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "gradient shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn dims4(shape: &[usize]) -> [usize; 4] {
    assert!(shape.len() <= 4, "rank {} > 4 not supported", shape.len());
    let mut d = [1usize; 4];
    let off = 4 - shape.len();
    d[off..].copy_from_slice(shape);
    d
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference checks shared by the op tests.
    use super::*;

    /// Compares the tape gradient of `sum(weights ⊙ f(inputs))` with central
    /// differences for every input element.
    pub fn check(
        inputs: &[Tensor<f64>],
        f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
        tol: f64,
    ) {
        let weights = {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = f(&tape, &vars);
            Tensor::from_fn(out.value().shape(), |i| ((i * 7919 % 13) as f64 - 6.0) / 5.0 + 0.01)
        };
        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let tape = Tape::new();
            let vars: Vec<_> = ins.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = f(&tape, &vars);
            out.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&tape, &vars);
        let grads = tape.backward(&[(out, weights.clone())]);
        let h = 1e-5;
        for (idx, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
            for j in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[idx].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[idx].data_mut()[j] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[j];
                let err = (a - numeric).abs() / (1e-6_f64.max(a.abs().max(numeric.abs())));
                assert!(
                    err < tol || (a - numeric).abs() < 1e-7,
                    "input {idx} elem {j}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }
}
