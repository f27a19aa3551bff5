//! Coefficient generators used by the exchange stages.

use crate::autograd::{self as ag, Scalar, Var};

use super::config::eca_kernel_size;
use super::layers::Conv;
use super::params::{Forward, Init, ParamId, ParamStore};

/// SimAM coefficients `sigmoid(1/e)` with the minimal energy
/// `e = 4(σ²+λ) / ((x−μ)² + 2σ² + 2λ)`, evaluated per position using the
/// spatial mean and variance of each channel.
///
/// The variance divides by `H·W − 1`. With `per_channel` the coefficients
/// are averaged over space, giving one value per channel.
pub fn simam<'t, T: Scalar>(x: Var<'t, T>, lambda: f64, per_channel: bool) -> Var<'t, T> {
    let shape = x.shape();
    let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
    let n = (hw.max(2) - 1) as f64;
    let mu = ag::mean_spatial(x);
    let dev = ag::square(ag::sub(x, mu));
    let var = ag::scale(ag::mean_spatial(dev), T::lit(hw as f64 / n));
    let denom = ag::scale(ag::add_scalar(var, T::lit(lambda)), T::lit(4.0));
    let s = ag::sigmoid(ag::add_scalar(ag::div(dev, denom), T::lit(0.5)));
    if per_channel {
        ag::mean_spatial(s)
    } else {
        s
    }
}

/// Efficient channel attention: global average pooling, a 1-D convolution
/// across channels with an adaptive odd kernel, and a sigmoid.
#[derive(Clone, Debug)]
pub struct Eca {
    weight: ParamId,
    kernel: usize,
}

impl Eca {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        channels: usize,
        gamma: f64,
        b: f64,
    ) -> Self {
        let kernel = eca_kernel_size(channels, gamma, b);
        let bound = 1.0 / (kernel as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), init.uniform(&[kernel], bound), true);
        Eca { weight, kernel }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Per-channel coefficients `(N,C,1,1)` in (0, 1).
    pub fn coefficients<'t, T: Scalar>(&self, f: &Forward<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let pooled = ag::mean_spatial(x);
        ag::sigmoid(ag::channel_conv1d(pooled, f.param(self.weight)))
    }
}

/// Spatial attention: channel-wise max and mean maps, a k×k convolution to
/// one channel and a sigmoid. Output is `(N,1,H,W)`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    conv: Conv,
}

impl SpatialAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, kernel: usize) -> Self {
        SpatialAttention {
            conv: Conv::new(store, init, &format!("{name}.conv"), 2, 1, kernel, false, false),
        }
    }

    pub fn coefficients<'t, T: Scalar>(&self, f: &Forward<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let pooled = ag::concat_channels(&[ag::max_channels(x), ag::mean_channels(x)]);
        ag::sigmoid(self.conv.forward(f, pooled))
    }
}

/// Convex exchange `c·primary + (1−c)·secondary`, evaluated as
/// `secondary + c·(primary − secondary)` so equal inputs pass through
/// bit-exactly for any coefficient map. `coef` broadcasts over the inputs.
pub fn exchange_mix<'t, T: Scalar>(primary: Var<'t, T>, secondary: Var<'t, T>, coef: Var<'t, T>) -> Var<'t, T> {
    ag::add(secondary, ag::mul(coef, ag::sub(primary, secondary)))
}
