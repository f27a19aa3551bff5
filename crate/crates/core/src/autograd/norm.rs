use super::{Scalar, Tensor, Var};

/// Per-channel statistics of a training-mode batch, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (divides by `m - 1`).
    pub var: Vec<T>,
}

/// Batch normalization over `(N, H, W)` per channel.
///
/// With `running = None` the batch statistics are used and returned;
/// otherwise the supplied running mean and variance normalize the input.
pub fn batch_norm2d<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running: Option<(&[T], &[T])>,
    eps: f64,
) -> (Var<'t, T>, Option<BatchStats<T>>) {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4();
    let hw = h * w;
    let m = n * hw;
    let eps = T::lit(eps);
    let (mean, var, stats) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        None => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let d = xv.data();
            for ch in 0..c {
                let mut s = 0.0f64;
                for b in 0..n {
                    s += d[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = s / m as f64;
                let mut ss = 0.0f64;
                for b in 0..n {
                    ss += d[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v.as_f64() - mu).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = T::lit(mu);
                var[ch] = T::lit(ss / m as f64);
            }
            let unbiased = var
                .iter()
                .map(|&v| v * T::lit(m as f64 / (m.max(2) - 1) as f64))
                .collect();
            (
                mean.clone(),
                var,
                Some(BatchStats {
                    mean,
                    var: unbiased,
                }),
            )
        }
    };
    let training = stats.is_some();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gv, bv) = (gamma.value(), beta.value());
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        for ch in 0..c {
            let (g, be, mu, is) = (gv.data()[ch], bv.data()[ch], mean[ch], inv_std[ch]);
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (o, &v) in out[range.clone()].iter_mut().zip(&xv.data()[range]) {
                *o = g * ((v - mu) * is) + be;
            }
        }
    }
    let y = x.tape().record(
        Tensor::new(xv.shape(), out),
        &[x, gamma, beta],
        move |args| {
            let (xv, gv) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut gx = args.needs[0].then(|| Tensor::zeros(xv.shape()));
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (mut sg, mut sgx) = (T::zero(), T::zero());
                for b in 0..n {
                    let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                    for (&gi, &xi) in g[range.clone()].iter().zip(&xv.data()[range]) {
                        sg += gi;
                        sgx += gi * (xi - mu) * is;
                    }
                }
                dgamma[ch] = sgx;
                dbeta[ch] = sg;
                if let Some(gx) = gx.as_mut() {
                    let gamma_c = gv.data()[ch];
                    let mf = T::lit(m as f64);
                    for b in 0..n {
                        let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                        for i in range {
                            let xhat = (xv.data()[i] - mu) * is;
                            gx.data_mut()[i] = if training {
                                gamma_c * is * (g[i] - sg / mf - xhat * sgx / mf)
                            } else {
                                gamma_c * is * g[i]
                            };
                        }
                    }
                }
            }
            vec![
                gx,
                Some(Tensor::new(&[c], dgamma)),
                Some(Tensor::new(&[c], dbeta)),
            ]
        },
    );
    (y, stats)
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check, random};
    use super::super::Tape;
    use super::*;

    #[test]
    fn training_output_is_standardized() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random(&[3, 2, 4, 4], 1));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let (y, stats) = batch_norm2d(x, g, b, None, 0.0);
        assert!(stats.is_some());
        let y = y.value();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| y.data()[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_train_and_eval() {
        let x = random(&[2, 3, 2, 3], 2);
        let g = random(&[3], 3);
        let b = random(&[3], 4);
        check(&[x.clone(), g.clone(), b.clone()], |_, v| batch_norm2d(v[0], v[1], v[2], None, 1e-5).0, 1e-5);
        let rm = [0.1, -0.2, 0.3];
        let rv = [1.5, 0.5, 2.0];
        check(&[x, g, b], |_, v| batch_norm2d(v[0], v[1], v[2], Some((&rm, &rv)), 1e-5).0, 1e-6);
    }
}
