//! Batched matrix products, softmax and layout operations.

use super::{matmul_into, Scalar, Tensor, Var};

/// Batched matrix product `op(a)·op(b)` over rank-3 tensors.
///
/// `a` is `(B,M,K)` (or `(B,K,M)` with `trans_a`), `b` is `(B,K,N)` (or
/// `(B,N,K)` with `trans_b`); the result is `(B,M,N)`.
pub fn bmm<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>, trans_a: bool, trans_b: bool) -> Var<'t, T> {
    let (av, bv) = (a.value(), b.value());
    assert_eq!(av.shape().len(), 3, "bmm expects rank-3 operands");
    assert_eq!(bv.shape().len(), 3, "bmm expects rank-3 operands");
    let batch = av.shape()[0];
    assert_eq!(bv.shape()[0], batch, "bmm batch mismatch");
    let (m, k) = if trans_a {
        (av.shape()[2], av.shape()[1])
    } else {
        (av.shape()[1], av.shape()[2])
    };
    let (k2, n) = if trans_b {
        (bv.shape()[2], bv.shape()[1])
    } else {
        (bv.shape()[1], bv.shape()[2])
    };
    assert_eq!(k, k2, "bmm inner dimension mismatch");
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        matmul_into(
            m,
            k,
            n,
            &av.data()[i * m * k..(i + 1) * m * k],
            trans_a,
            &bv.data()[i * k * n..(i + 1) * k * n],
            trans_b,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    a.tape()
        .record(Tensor::new(&[batch, m, n], out), &[a, b], move |args| {
            let (av, bv, g) = (&args.inputs[0], &args.inputs[1], args.grad.data());
            let mut ga = args.needs[0].then(|| Tensor::zeros(av.shape()));
            let mut gb = args.needs[1].then(|| Tensor::zeros(bv.shape()));
            for i in 0..batch {
                let (ai, bi) = (
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                );
                let gi = &g[i * m * n..(i + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    let dst = &mut ga.data_mut()[i * m * k..(i + 1) * m * k];
                    if trans_a {
                        matmul_into(k, n, m, bi, trans_b, gi, true, T::zero(), dst);
                    } else {
                        matmul_into(m, n, k, gi, false, bi, !trans_b, T::zero(), dst);
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    let dst = &mut gb.data_mut()[i * k * n..(i + 1) * k * n];
                    if trans_b {
                        matmul_into(n, m, k, gi, true, ai, trans_a, T::zero(), dst);
                    } else {
                        matmul_into(k, m, n, ai, !trans_a, gi, false, T::zero(), dst);
                    }
                }
            }
            vec![ga, gb]
        })
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let last = *xv.shape().last().expect("softmax on scalar");
    let mut out = vec![T::zero(); xv.len()];
    for (src, dst) in xv.data().chunks(last).zip(out.chunks_mut(last)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / total);
    }
    x.tape()
        .record(Tensor::new(xv.shape(), out), &[x], move |args| {
            let mut gx = Tensor::zeros(args.output.shape());
            for ((y, g), dst) in args
                .output
                .data()
                .chunks(last)
                .zip(args.grad.data().chunks(last))
                .zip(gx.data_mut().chunks_mut(last))
            {
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for ((d, &yi), &gi) in dst.iter_mut().zip(y).zip(g) {
                    *d = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        })
}

pub fn reshape<'t, T: Scalar>(x: Var<'t, T>, shape: &[usize]) -> Var<'t, T> {
    let xv = x.value();
    let out = (*xv).clone().reshaped(shape);
    x.tape().record(out, &[x], |args| {
        vec![Some(args.grad.clone().reshaped(args.inputs[0].shape()))]
    })
}

/// Concatenates `(N,Ci,H,W)` tensors along the channel axis.
pub fn concat_channels<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Var<'t, T> {
    assert!(!parts.is_empty());
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let [n, _, h, w] = values[0].dims4();
    let hw = h * w;
    let chans: Vec<usize> = values
        .iter()
        .map(|v| {
            let [vn, vc, vh, vw] = v.dims4();
            assert_eq!((vn, vh, vw), (n, h, w), "concat shape mismatch");
            vc
        })
        .collect();
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (v, &c) in values.iter().zip(&chans) {
            out.extend_from_slice(&v.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    parts[0]
        .tape()
        .record(Tensor::new(&[n, total, h, w], out), parts, move |args| {
            let g = args.grad.data();
            let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(chans.len());
            let mut offset = 0;
            for (idx, &c) in chans.iter().enumerate() {
                if args.needs[idx] {
                    let mut data = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        let start = (b * total + offset) * hw;
                        data.extend_from_slice(&g[start..start + c * hw]);
                    }
                    grads.push(Some(Tensor::new(&[n, c, h, w], data)));
                } else {
                    grads.push(None);
                }
                offset += c;
            }
            grads
        })
}

/// 1-D zero-padded convolution across the channel axis of pooled
/// descriptors `(N,C,1,1)` with an odd kernel `(k)` and no bias.
pub fn channel_conv1d<'t, T: Scalar>(x: Var<'t, T>, weight: Var<'t, T>) -> Var<'t, T> {
    let (xv, wv) = (x.value(), weight.value());
    let [n, c, h, w] = xv.dims4();
    assert_eq!(h * w, 1, "channel conv expects pooled (N,C,1,1) input");
    let k = wv.len();
    assert_eq!(k % 2, 1, "channel conv kernel must be odd");
    let p = k / 2;
    let conv = move |x: &[T], wt: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            for ch in 0..c {
                let mut acc = T::zero();
                for (j, &wj) in wt.iter().enumerate() {
                    let src = ch + j;
                    if src >= p && src - p < c {
                        acc += wj * x[b * c + src - p];
                    }
                }
                out[b * c + ch] = acc;
            }
        }
        out
    };
    let out = conv(xv.data(), wv.data());
    x.tape()
        .record(Tensor::new(xv.shape(), out), &[x, weight], move |args| {
            let (xv, wv, g) = (&args.inputs[0], &args.inputs[1], args.grad.data());
            let mut gx = vec![T::zero(); n * c];
            let mut gw = vec![T::zero(); k];
            for b in 0..n {
                for ch in 0..c {
                    let gv = g[b * c + ch];
                    for j in 0..k {
                        let src = ch + j;
                        if src >= p && src - p < c {
                            gx[b * c + src - p] += gv * wv.data()[j];
                            gw[j] += gv * xv.data()[b * c + src - p];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::new(xv.shape(), gx)),
                Some(Tensor::new(wv.shape(), gw)),
            ]
        })
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check, random};
    use super::super::Tape;
    use super::*;

    #[test]
    fn bmm_all_transpose_combinations() {
        for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
            let a = random(if ta { &[2, 4, 3] } else { &[2, 3, 4] }, 1);
            let b = random(if tb { &[2, 5, 4] } else { &[2, 4, 5] }, 2);
            // reference product
            let tape = Tape::new();
            let c = bmm(tape.constant(a.clone()), tape.constant(b.clone()), ta, tb).value();
            assert_eq!(c.shape(), &[2, 3, 5]);
            for bi in 0..2 {
                for i in 0..3 {
                    for j in 0..5 {
                        let mut acc = 0.0;
                        for l in 0..4 {
                            let av = if ta { a.data()[bi * 12 + l * 3 + i] } else { a.data()[bi * 12 + i * 4 + l] };
                            let bv = if tb { b.data()[bi * 20 + j * 4 + l] } else { b.data()[bi * 20 + l * 5 + j] };
                            acc += av * bv;
                        }
                        assert!((c.data()[bi * 15 + i * 5 + j] - acc).abs() < 1e-12);
                    }
                }
            }
            check(&[a, b], move |_, v| bmm(v[0], v[1], ta, tb), 1e-6);
        }
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let tape = Tape::<f64>::new();
        let y = softmax_last(tape.constant(random(&[3, 7], 4).map(|v| 30.0 * v))).value();
        for row in y.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        check(&[random(&[2, 3, 4], 5)], |_, v| softmax_last(v[0]), 1e-6);
    }

    #[test]
    fn concat_and_reshape_gradients() {
        let a = random(&[2, 1, 2, 3], 6);
        let b = random(&[2, 3, 2, 3], 7);
        check(&[a.clone(), b], |_, v| concat_channels(&[v[0], v[1]]), 1e-6);
        check(&[a], |_, v| reshape(v[0], &[2, 6]), 1e-6);
    }

    #[test]
    fn channel_conv_gradients() {
        let x = random(&[2, 6, 1, 1], 8);
        let w = random(&[3], 9);
        check(&[x, w], |_, v| channel_conv1d(v[0], v[1]), 1e-6);
    }
}
