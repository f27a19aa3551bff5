use std::rc::Rc;

use crate::autograd::{self as ag, Scalar, Tensor, Var};
use crate::{Error, Result};

use super::layers::Conv;
use super::params::{Forward, Init, ParamStore};

/// Single-head attention from one modality's queries onto the other's
/// keys and values, added back residually to the query source.
#[derive(Clone, Debug)]
struct CrossAttention {
    query: Conv,
    key: Conv,
    value: Conv,
}

impl CrossAttention {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, c: usize) -> Self {
        let proj = |store: &mut ParamStore<T>, init: &mut Init, which: &str| {
            Conv::new(store, init, &format!("{name}.{which}"), c, c, 1, true, false)
        };
        CrossAttention {
            query: proj(store, init, "query"),
            key: proj(store, init, "key"),
            value: proj(store, init, "value"),
        }
    }

    /// Returns the residual output and the `(N, L, L)` attention weights.
    fn forward<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        source: Var<'t, T>,
        other: Var<'t, T>,
    ) -> (Var<'t, T>, Var<'t, T>) {
        let shape = source.shape();
        let (n, c, l) = (shape[0], shape[1], shape[2] * shape[3]);
        let flat = |x: Var<'t, T>| ag::reshape(x, &[n, c, l]);
        let q = flat(self.query.forward(f, source));
        let k = flat(self.key.forward(f, other));
        let v = flat(self.value.forward(f, other));
        let scores = ag::scale(ag::bmm(q, k, true, false), T::lit(1.0 / (c as f64).sqrt()));
        let weights = ag::softmax_last(scores);
        let attended = ag::bmm(v, weights, false, true);
        (ag::add(source, ag::reshape(attended, &shape)), weights)
    }
}

/// Output of [`CrossFusion::forward`].
pub struct FusionOutput<'t, T> {
    /// Fused deepest feature map.
    pub fused: Var<'t, T>,
    /// Concatenation of both attended branches before the 1×1 mix.
    pub concatenated: Var<'t, T>,
    /// Attention weights `(T1w→FA, FA→T1w)`, rows indexed by query position.
    pub attention: (Rc<Tensor<T>>, Rc<Tensor<T>>),
}

/// Bidirectional cross-attention between the deepest T1w and FA features,
/// concatenation, and a 1×1 convolution to the fusion width.
#[derive(Clone, Debug)]
pub struct CrossFusion {
    t1w_to_fa: CrossAttention,
    fa_to_t1w: CrossAttention,
    mix: Conv,
}

impl CrossFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, channels: usize, out: usize) -> Self {
        CrossFusion {
            t1w_to_fa: CrossAttention::new(store, init, "fusion.t1w_to_fa", channels),
            fa_to_t1w: CrossAttention::new(store, init, "fusion.fa_to_t1w", channels),
            mix: Conv::new(store, init, "fusion.mix", 2 * channels, out, 1, true, false),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        t1w: Var<'t, T>,
        fa: Var<'t, T>,
    ) -> Result<FusionOutput<'t, T>> {
        if t1w.shape() != fa.shape() {
            return Err(Error::Shape(format!(
                "fusion inputs differ: {:?} vs {:?}",
                t1w.shape(),
                fa.shape()
            )));
        }
        let (t, wt) = self.t1w_to_fa.forward(f, t1w, fa);
        let (a, wa) = self.fa_to_t1w.forward(f, fa, t1w);
        let concatenated = ag::concat_channels(&[t, a]);
        Ok(FusionOutput {
            fused: self.mix.forward(f, concatenated),
            concatenated,
            attention: (wt.value(), wa.value()),
        })
    }
}
