use crate::autograd::{self as ag, Scalar, Var};
use crate::{Error, Result};

use super::config::ModelConfig;
use super::layers::{dropout, Conv, ConvBlock};
use super::params::{Forward, Init, ParamStore};

/// U-shaped decoder: four (upsample, skip concatenation, conv block)
/// stages and a 1×1 classifier. Returns pre-sigmoid logits.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// Deepest stage first.
    blocks: Vec<ConvBlock>,
    head: Conv,
    dropout: f64,
}

impl Decoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cfg: &ModelConfig,
        dropout: f64,
    ) -> Self {
        let w = &cfg.widths;
        let mut prev = cfg.fusion_width();
        let mut blocks = Vec::with_capacity(4);
        for j in (0..4).rev() {
            blocks.push(ConvBlock::new(store, init, &format!("{name}.up{j}"), prev + w[j], w[j]));
            prev = w[j];
        }
        let head = Conv::new(store, init, &format!("{name}.head"), w[0], cfg.classes, 1, true, false);
        // nerves are rare, so the heads start out predicting background
        let logit = (cfg.head_prior / (1.0 - cfg.head_prior)).ln();
        if let Some(b) = head.bias {
            store.get_mut(b).data_mut().fill(T::lit(logit));
        }
        Decoder {
            blocks,
            head,
            dropout,
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    /// `skips` holds the stage 0..3 skip features, shallow first.
    pub fn forward<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        fused: Var<'t, T>,
        skips: &[Var<'t, T>],
    ) -> Result<Var<'t, T>> {
        if skips.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "decoder expects {} skips, got {}",
                self.blocks.len(),
                skips.len()
            )));
        }
        let mut x = fused;
        for (block, skip) in self.blocks.iter().zip(skips.iter().rev()) {
            let up = ag::upsample_bilinear2x(x);
            let (us, ss) = (up.shape(), skip.shape());
            if us[0] != ss[0] || us[2..] != ss[2..] {
                return Err(Error::Shape(format!("upsampled {us:?} does not match skip {ss:?}")));
            }
            x = block.forward(f, ag::concat_channels(&[up, *skip]));
            x = dropout(f, x, self.dropout);
        }
        Ok(self.head.forward(f, x))
    }
}
