//! Dual-branch encoder with modality exchange between the T1w and FA paths.

use std::rc::Rc;

use crate::autograd::{self as ag, Scalar, Tensor, Var};
use crate::{Error, Result};

use super::attention::{exchange_mix, simam, Eca, SpatialAttention};
use super::config::ModelConfig;
use super::layers::ConvBlock;
use super::params::{Forward, Init, ParamStore};

/// Result of one exchange step for a single branch.
pub struct StepOutput<'t, T> {
    /// Next-stage feature map (pooled, then convolved).
    pub output: Var<'t, T>,
    /// Pre-pool exchange mixture.
    pub mixture: Var<'t, T>,
    /// Exchange coefficients, absent when the module is ablated.
    pub coefficients: Option<Var<'t, T>>,
}

/// One of the four encoder stages.
#[derive(Clone, Debug)]
pub struct ExchangeStage {
    t1w_block: ConvBlock,
    fa_block: ConvBlock,
    eca: Option<Eca>,
    sa: Option<SpatialAttention>,
    fem: bool,
    simam_lambda: f64,
    simam_per_channel: bool,
    swap_aem_mixture: bool,
}

fn check_pair<T: Scalar>(a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Shape(format!("modality features differ: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

impl ExchangeStage {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: &ModelConfig,
    ) -> Self {
        let t1w_block = ConvBlock::new(store, init, &format!("{name}.t1w"), cin, cout);
        let fa_block = ConvBlock::new(store, init, &format!("{name}.fa"), cin, cout);
        let (eca, sa) = if cfg.aem {
            (
                Some(Eca::new(store, init, &format!("{name}.eca"), cin, cfg.eca_gamma, cfg.eca_b)),
                Some(SpatialAttention::new(store, init, &format!("{name}.sa"), cfg.sa_kernel)),
            )
        } else {
            (None, None)
        };
        ExchangeStage {
            t1w_block,
            fa_block,
            eca,
            sa,
            fem: cfg.fem,
            simam_lambda: cfg.simam_lambda,
            simam_per_channel: cfg.simam_per_channel,
            swap_aem_mixture: cfg.swap_aem_mixture,
        }
    }

    /// T1w branch: SimAM coefficients of the summed features steer the
    /// mixture `S·T1w + (1−S)·FA` before pooling and convolution. Without
    /// FEM the branch is a plain pool-and-convolve.
    pub fn fem_step<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        t1w: Var<'t, T>,
        fa: Var<'t, T>,
    ) -> Result<StepOutput<'t, T>> {
        check_pair(t1w, fa)?;
        let (mixture, coefficients) = if self.fem {
            let s = simam(ag::add(t1w, fa), self.simam_lambda, self.simam_per_channel);
            (exchange_mix(t1w, fa, s), Some(s))
        } else {
            (t1w, None)
        };
        let output = self.t1w_block.forward(f, ag::max_pool2x2(mixture));
        Ok(StepOutput {
            output,
            mixture,
            coefficients,
        })
    }

    /// FA branch: spatial attention over ECA-reweighted summed features
    /// gives `E`, mixed as `E·T1w + (1−E)·FA` (or with the roles swapped
    /// when configured). Without AEM the branch is a plain pool-and-convolve.
    pub fn aem_step<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        t1w: Var<'t, T>,
        fa: Var<'t, T>,
    ) -> Result<StepOutput<'t, T>> {
        check_pair(t1w, fa)?;
        let (mixture, coefficients) = match (&self.eca, &self.sa) {
            (Some(eca), Some(sa)) => {
                let input = ag::add(t1w, fa);
                let reweighted = ag::mul(input, eca.coefficients(f, input));
                let e = sa.coefficients(f, reweighted);
                let mix = if self.swap_aem_mixture {
                    exchange_mix(fa, t1w, e)
                } else {
                    exchange_mix(t1w, fa, e)
                };
                (mix, Some(e))
            }
            _ => (fa, None),
        };
        let output = self.fa_block.forward(f, ag::max_pool2x2(mixture));
        Ok(StepOutput {
            output,
            mixture,
            coefficients,
        })
    }
}

/// Features and coefficients retained from an encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderState<T> {
    /// `(T1w, FA)` features for stages 0 (stem) through 4.
    pub features: Vec<(Rc<Tensor<T>>, Rc<Tensor<T>>)>,
    /// SimAM coefficients `S_i` per exchange stage.
    pub fem_coefficients: Vec<Option<Rc<Tensor<T>>>>,
    /// AEM coefficients `E_i` per exchange stage.
    pub aem_coefficients: Vec<Option<Rc<Tensor<T>>>>,
}

/// Everything the decoders need from the encoder.
pub struct EncoderOutput<'t, T> {
    pub deepest_t1w: Var<'t, T>,
    pub deepest_fa: Var<'t, T>,
    /// Channel-wise sums `X_T1w + X_FA` for stages 0..4 (shallow first).
    pub skips: Vec<Var<'t, T>>,
    pub state: EncoderState<T>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem_t1w: ConvBlock,
    stem_fa: ConvBlock,
    stages: Vec<ExchangeStage>,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        let w = &cfg.widths;
        let stages = (0..4)
            .map(|i| ExchangeStage::new(store, init, &format!("mem.stage{i}"), w[i], w[i + 1], cfg))
            .collect();
        Encoder {
            stem_t1w: ConvBlock::new(store, init, "stem.t1w", cfg.in_channels, w[0]),
            stem_fa: ConvBlock::new(store, init, "stem.fa", cfg.in_channels, w[0]),
            stages,
        }
    }

    pub fn stages(&self) -> &[ExchangeStage] {
        &self.stages
    }

    /// Stem convolutions followed by four exchange stages.
    pub fn forward<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        t1w: Var<'t, T>,
        fa: Var<'t, T>,
    ) -> Result<EncoderOutput<'t, T>> {
        check_pair(t1w, fa)?;
        let x_t = self.stem_t1w.forward(f, t1w);
        let x_f = self.stem_fa.forward(f, fa);
        self.exchange(f, x_t, x_f)
    }

    /// The four exchange stages applied to stem features.
    pub fn exchange<'t, T: Scalar>(
        &self,
        f: &Forward<'t, '_, T>,
        mut x_t: Var<'t, T>,
        mut x_f: Var<'t, T>,
    ) -> Result<EncoderOutput<'t, T>> {
        let mut state = EncoderState {
            features: vec![(x_t.value(), x_f.value())],
            fem_coefficients: Vec::with_capacity(4),
            aem_coefficients: Vec::with_capacity(4),
        };
        let mut skips = Vec::with_capacity(4);
        for stage in &self.stages {
            skips.push(ag::add(x_t, x_f));
            let t = stage.fem_step(f, x_t, x_f)?;
            let a = stage.aem_step(f, x_t, x_f)?;
            state.fem_coefficients.push(t.coefficients.map(|c| c.value()));
            state.aem_coefficients.push(a.coefficients.map(|c| c.value()));
            x_t = t.output;
            x_f = a.output;
            state.features.push((x_t.value(), x_f.value()));
        }
        Ok(EncoderOutput {
            deepest_t1w: x_t,
            deepest_fa: x_f,
            skips,
            state,
        })
    }
}
