//! Elementwise arithmetic with broadcasting, activations and reductions.

use super::tape::BackwardArgs;
use super::{dims4, Scalar, Tensor, Var};

/// Index bookkeeping for a binary op whose operands broadcast (size-1 axes)
/// against each other, up to rank 4.
struct Broadcast {
    shape: Vec<usize>,
    dims: [usize; 4],
    stride_a: [usize; 4],
    stride_b: [usize; 4],
    same: bool,
}

fn strides(d: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let mut s = [0usize; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        s[i] = if d[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= d[i];
    }
    s
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Self {
        let (da, db) = (dims4(a), dims4(b));
        let mut dims = [1usize; 4];
        for i in 0..4 {
            assert!(
                da[i] == db[i] || da[i] == 1 || db[i] == 1,
                "cannot broadcast {a:?} with {b:?}"
            );
            dims[i] = da[i].max(db[i]);
        }
        let rank = a.len().max(b.len());
        Broadcast {
            shape: dims[4 - rank..].to_vec(),
            dims,
            stride_a: strides(da, dims),
            stride_b: strides(db, dims),
            same: a == b,
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        if self.same {
            let n: usize = self.dims.iter().product();
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let [d0, d1, d2, d3] = self.dims;
        let (sa, sb) = (self.stride_a, self.stride_b);
        let mut o = 0;
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                for i2 in 0..d2 {
                    let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                    let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                    for i3 in 0..d3 {
                        f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                        o += 1;
                    }
                }
            }
        }
    }
}

fn binary<'t, T: Scalar>(
    a: Var<'t, T>,
    b: Var<'t, T>,
    op: impl Fn(T, T) -> T,
    // Partial derivatives (d/da, d/db) given (a, b).
    partials: impl Fn(T, T) -> (T, T) + 'static,
) -> Var<'t, T> {
    let (va, vb) = (a.value(), b.value());
    let bc = Broadcast::new(va.shape(), vb.shape());
    let mut out = vec![T::zero(); bc.dims.iter().product()];
    let (da, db) = (va.data(), vb.data());
    bc.for_each(|o, ia, ib| out[o] = op(da[ia], db[ib]));
    let out = Tensor::new(&bc.shape, out);
    a.tape().record(out, &[a, b], move |args: &BackwardArgs<'_, T>| {
        let (xa, xb) = (&args.inputs[0], &args.inputs[1]);
        let bc = Broadcast::new(xa.shape(), xb.shape());
        let g = args.grad.data();
        let mut ga = args.needs[0].then(|| Tensor::zeros(xa.shape()));
        let mut gb = args.needs[1].then(|| Tensor::zeros(xb.shape()));
        let (da, db) = (xa.data(), xb.data());
        match (ga.as_mut(), gb.as_mut()) {
            (Some(ga), Some(gb)) => {
                let (ga, gb) = (ga.data_mut(), gb.data_mut());
                bc.for_each(|o, ia, ib| {
                    let (pa, pb) = partials(da[ia], db[ib]);
                    ga[ia] += g[o] * pa;
                    gb[ib] += g[o] * pb;
                });
            }
            (Some(ga), None) => {
                let ga = ga.data_mut();
                bc.for_each(|o, ia, ib| ga[ia] += g[o] * partials(da[ia], db[ib]).0);
            }
            (None, Some(gb)) => {
                let gb = gb.data_mut();
                bc.for_each(|o, ia, ib| gb[ib] += g[o] * partials(da[ia], db[ib]).1);
            }
            (None, None) => {}
        }
        vec![ga, gb]
    })
}

pub fn add<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    binary(a, b, |x, y| x + y, |_, _| (T::one(), T::one()))
}

pub fn sub<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    binary(a, b, |x, y| x - y, |_, _| (T::one(), -T::one()))
}

pub fn mul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    binary(a, b, |x, y| x * y, |x, y| (y, x))
}

pub fn div<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    binary(a, b, |x, y| x / y, |x, y| (T::one() / y, -x / (y * y)))
}

fn unary<'t, T: Scalar>(
    a: Var<'t, T>,
    f: impl Fn(T) -> T,
    // Derivative given (input, output).
    deriv: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let out = a.value().map(f);
    a.tape().record(out, &[a], move |args: &BackwardArgs<'_, T>| {
        let x = args.inputs[0].data();
        let y = args.output.data();
        let g = args.grad.data();
        let data = (0..g.len()).map(|i| g[i] * deriv(x[i], y[i])).collect();
        vec![Some(Tensor::new(args.grad.shape(), data))]
    })
}

pub fn relu<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    unary(
        a,
        |x| if x > T::zero() { x } else { T::zero() },
        |x, _| if x > T::zero() { T::one() } else { T::zero() },
    )
}

pub fn sigmoid<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    unary(a, sigmoid_scalar, |_, y| y * (T::one() - y))
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn square<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    unary(a, |x| x * x, |x, _| x + x)
}

pub fn scale<'t, T: Scalar>(a: Var<'t, T>, s: T) -> Var<'t, T> {
    unary(a, move |x| x * s, move |_, _| s)
}

pub fn add_scalar<'t, T: Scalar>(a: Var<'t, T>, s: T) -> Var<'t, T> {
    unary(a, move |x| x + s, |_, _| T::one())
}

/// Mean over the two trailing (spatial) axes: `(N,C,H,W) -> (N,C,1,1)`.
pub fn mean_spatial<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let v = a.value();
    let [n, c, h, w] = v.dims4();
    let hw = h * w;
    let inv = T::one() / T::lit(hw as f64);
    let data = v
        .data()
        .chunks(hw)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();
    a.tape()
        .record(Tensor::new(&[n, c, 1, 1], data), &[a], move |args| {
            let mut g = Tensor::zeros(args.inputs[0].shape());
            for (dst, &gv) in g.data_mut().chunks_mut(hw).zip(args.grad.data()) {
                dst.fill(gv * inv);
            }
            vec![Some(g)]
        })
}

/// Mean over the channel axis: `(N,C,H,W) -> (N,1,H,W)`.
pub fn mean_channels<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let v = a.value();
    let [n, c, h, w] = v.dims4();
    let hw = h * w;
    let inv = T::one() / T::lit(c as f64);
    let mut out = vec![T::zero(); n * hw];
    for b in 0..n {
        let dst = &mut out[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let src = &v.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        dst.iter_mut().for_each(|d| *d = *d * inv);
    }
    a.tape()
        .record(Tensor::new(&[n, 1, h, w], out), &[a], move |args| {
            let mut g = Tensor::zeros(args.inputs[0].shape());
            let gd = args.grad.data();
            for b in 0..n {
                for ch in 0..c {
                    let dst = &mut g.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for (d, &s) in dst.iter_mut().zip(&gd[b * hw..(b + 1) * hw]) {
                        *d = s * inv;
                    }
                }
            }
            vec![Some(g)]
        })
}

/// Maximum over the channel axis: `(N,C,H,W) -> (N,1,H,W)`. Ties route the
/// gradient to the lowest channel index.
pub fn max_channels<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let v = a.value();
    let [n, c, h, w] = v.dims4();
    let hw = h * w;
    let mut out = vec![T::neg_infinity(); n * hw];
    let mut arg = vec![0usize; n * hw];
    for b in 0..n {
        for ch in 0..c {
            let src = &v.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (p, &s) in src.iter().enumerate() {
                if s > out[b * hw + p] {
                    out[b * hw + p] = s;
                    arg[b * hw + p] = ch;
                }
            }
        }
    }
    a.tape()
        .record(Tensor::new(&[n, 1, h, w], out), &[a], move |args| {
            let mut g = Tensor::zeros(args.inputs[0].shape());
            for b in 0..n {
                for p in 0..hw {
                    let ch = arg[b * hw + p];
                    g.data_mut()[(b * c + ch) * hw + p] = args.grad.data()[b * hw + p];
                }
            }
            vec![Some(g)]
        })
}

/// Sum of all elements, as a one-element tensor.
pub fn sum_all<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let s = a.value().sum();
    a.tape().record(Tensor::new(&[1], vec![s]), &[a], |args| {
        let g = args.grad.data()[0];
        vec![Some(Tensor::full(args.inputs[0].shape(), g))]
    })
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check, random};
    use super::super::Tape;
    use super::*;

    #[test]
    fn broadcast_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[2, 3, 4, 5], 1.0));
        let b = tape.constant(Tensor::full(&[2, 1, 4, 5], 2.0));
        let c = tape.constant(Tensor::full(&[2, 3, 1, 1], 3.0));
        assert_eq!(mul(a, b).shape(), vec![2, 3, 4, 5]);
        assert_eq!(add(c, a).shape(), vec![2, 3, 4, 5]);
        assert!(add(a, c).value().data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn binary_gradients() {
        let a = random(&[2, 3, 2, 2], 1);
        let b = random(&[2, 1, 2, 2], 2);
        let c = random(&[2, 3, 1, 1], 3).map(|v| v + 2.0);
        check(&[a.clone(), b.clone()], |_, v| add(v[0], v[1]), 1e-6);
        check(&[a.clone(), b.clone()], |_, v| sub(v[0], v[1]), 1e-6);
        check(&[a.clone(), b.clone()], |_, v| mul(v[0], v[1]), 1e-6);
        check(&[a.clone(), c.clone()], |_, v| div(v[0], v[1]), 1e-6);
        // same variable on both sides
        check(&[a], |_, v| mul(v[0], v[0]), 1e-6);
    }

    #[test]
    fn unary_gradients() {
        let a = random(&[1, 2, 3, 3], 4).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
        check(&[a.clone()], |_, v| relu(v[0]), 1e-6);
        check(&[a.clone()], |_, v| sigmoid(v[0]), 1e-6);
        check(&[a.clone()], |_, v| square(v[0]), 1e-6);
        check(&[a.clone()], |_, v| scale(add_scalar(v[0], 0.5), -3.0), 1e-6);
    }

    #[test]
    fn reduction_gradients() {
        let a = random(&[2, 3, 2, 3], 5);
        check(&[a.clone()], |_, v| mean_spatial(v[0]), 1e-6);
        check(&[a.clone()], |_, v| mean_channels(v[0]), 1e-6);
        check(&[a.clone()], |_, v| max_channels(v[0]), 1e-6);
        check(&[a], |_, v| sum_all(v[0]), 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
        assert!((sigmoid_scalar(0.5f64) - 0.622_459_331_201_854_6).abs() < 1e-15);
    }
}
