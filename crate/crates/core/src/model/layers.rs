use crate::autograd::{self as ag, Scalar, Tensor, Var};

use super::params::{Forward, Init, Mode, ParamId, ParamStore};

const BN_EPS: f64 = 1e-5;

/// 2-D convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// `relu_gain` selects Kaiming-uniform bounds for layers feeding a ReLU;
    /// otherwise the fan-in bound `1/sqrt(fan_in)` is used.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        relu_gain: bool,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = if relu_gain {
            (6.0 / fan_in).sqrt()
        } else {
            1.0 / fan_in.sqrt()
        };
        let weight = store.add(
            format!("{name}.weight"),
            init.uniform(&[cout, cin, k, k], bound),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        Conv { weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Forward<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        ag::conv2d(x, f.param(self.weight), self.bias.map(|b| f.param(b)))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[c], T::one()),
                false,
            ),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Forward<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let (gamma, beta) = (f.param(self.gamma), f.param(self.beta));
        match f.mode() {
            Mode::Train => {
                let (y, stats) = ag::batch_norm2d(x, gamma, beta, None, BN_EPS);
                if let Some(stats) = stats {
                    f.push_bn_stats(self.running_mean, self.running_var, stats);
                }
                y
            }
            Mode::Eval => {
                let store = f.store();
                let (rm, rv) = (store.get(self.running_mean), store.get(self.running_var));
                ag::batch_norm2d(x, gamma, beta, Some((rm.data(), rv.data())), BN_EPS).0
            }
        }
    }
}

/// Two 3×3 convolutions, each followed by batch normalization and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
}

impl ConvBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        ConvBlock {
            conv1: Conv::new(store, init, &format!("{name}.conv1"), cin, cout, 3, false, true),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv::new(store, init, &format!("{name}.conv2"), cout, cout, 3, false, true),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Forward<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let x = ag::relu(self.bn1.forward(f, self.conv1.forward(f, x)));
        ag::relu(self.bn2.forward(f, self.conv2.forward(f, x)))
    }
}

/// Inverted dropout; identity outside training or at rate 0.
pub fn dropout<'t, T: Scalar>(f: &Forward<'t, '_, T>, x: Var<'t, T>, rate: f64) -> Var<'t, T> {
    if f.mode() == Mode::Eval || rate == 0.0 {
        return x;
    }
    let mask = f.tape().constant(f.dropout_mask(&x.shape(), rate));
    ag::mul(x, mask)
}
