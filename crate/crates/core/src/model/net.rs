use std::rc::Rc;

use crate::autograd::{self as ag, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

use super::config::ModelConfig;
use super::decoder::Decoder;
use super::encoder::{Encoder, EncoderState};
use super::fusion::CrossFusion;
use super::params::{Forward, Init, Mode, ParamStore};

/// Two sigmoid probability maps `(N, C, H, W)` from the two decoders.
#[derive(Clone, Debug)]
pub struct PredictionPair<T> {
    pub p1: Tensor<T>,
    pub p2: Tensor<T>,
}

/// Handles produced by [`Dclnet::forward`].
pub struct NetOutput<'t, T> {
    pub p1: Var<'t, T>,
    /// Auxiliary decoder output, skipped when not requested.
    pub p2: Option<Var<'t, T>>,
    pub encoder: EncoderState<T>,
    pub fused: Rc<Tensor<T>>,
    pub attention: (Rc<Tensor<T>>, Rc<Tensor<T>>),
}

/// Dual-branch exchange encoder, cross fusion and two U-shaped decoders.
#[derive(Clone, Debug)]
pub struct Dclnet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Encoder,
    fusion: CrossFusion,
    decoder1: Decoder,
    decoder2: Decoder,
}

impl<T: Scalar> Dclnet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(config.init_seed);
        let encoder = Encoder::new(&mut params, &mut init, &config);
        let fusion = CrossFusion::new(&mut params, &mut init, config.deepest_width(), config.fusion_width());
        let decoder1 = Decoder::new(&mut params, &mut init, "decoder1", &config, 0.0);
        let decoder2 = Decoder::new(&mut params, &mut init, "decoder2", &config, config.dropout);
        Ok(Dclnet {
            config,
            params,
            encoder,
            fusion,
            decoder1,
            decoder2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn fusion(&self) -> &CrossFusion {
        &self.fusion
    }

    pub fn decoders(&self) -> (&Decoder, &Decoder) {
        (&self.decoder1, &self.decoder2)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_trainable()
    }

    /// Same network with parameters converted to another element type.
    pub fn cast<U: Scalar>(&self) -> Dclnet<U> {
        Dclnet {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            fusion: self.fusion.clone(),
            decoder1: self.decoder1.clone(),
            decoder2: self.decoder2.clone(),
        }
    }

    fn check_input(&self, t1w: &[usize], fa: &[usize]) -> Result<()> {
        if t1w != fa {
            return Err(Error::Shape(format!("T1w {t1w:?} and FA {fa:?} differ")));
        }
        if t1w.len() != 4 || t1w[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected (N, {}, H, W) input, got {t1w:?}",
                self.config.in_channels
            )));
        }
        if t1w[2] % 16 != 0 || t1w[3] % 16 != 0 {
            return Err(Error::Shape(format!(
                "spatial dims {}x{} must be divisible by 16",
                t1w[2], t1w[3]
            )));
        }
        Ok(())
    }

    /// Full forward pass; `with_aux` controls whether decoder 2 runs.
    pub fn forward<'t>(
        &self,
        f: &Forward<'t, '_, T>,
        t1w: Var<'t, T>,
        fa: Var<'t, T>,
        with_aux: bool,
    ) -> Result<NetOutput<'t, T>> {
        self.check_input(&t1w.shape(), &fa.shape())?;
        let enc = self.encoder.forward(f, t1w, fa)?;
        let fusion = self.fusion.forward(f, enc.deepest_t1w, enc.deepest_fa)?;
        let p1 = ag::sigmoid(self.decoder1.forward(f, fusion.fused, &enc.skips)?);
        let p2 = if with_aux {
            Some(ag::sigmoid(self.decoder2.forward(f, fusion.fused, &enc.skips)?))
        } else {
            None
        };
        Ok(NetOutput {
            p1,
            p2,
            encoder: enc.state,
            fused: fusion.fused.value(),
            attention: fusion.attention,
        })
    }

    /// Evaluates both decoders on a batch of `(N,1,H,W)` slices.
    pub fn predict(
        &self,
        t1w: &Tensor<T>,
        fa: &Tensor<T>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<PredictionPair<T>> {
        let tape = Tape::inference();
        let f = Forward::new(&tape, &self.params, mode, dropout_seed);
        let out = self.forward(&f, tape.constant(t1w.clone()), tape.constant(fa.clone()), true)?;
        Ok(PredictionPair {
            p1: (*out.p1.value()).clone(),
            p2: (*out.p2.expect("aux requested").value()).clone(),
        })
    }
}
