use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input channels per modality.
    pub in_channels: usize,
    /// Stem width followed by the widths of the four exchange stages.
    pub widths: Vec<usize>,
    /// Number of nerve classes (output channels).
    pub classes: usize,
    /// SimAM regularizer λ.
    pub simam_lambda: f64,
    pub eca_gamma: f64,
    pub eca_b: f64,
    /// Spatial-attention kernel size (odd).
    pub sa_kernel: usize,
    /// Output width of the cross-fusion mix; `None` keeps the deepest width.
    pub fusion_width: Option<usize>,
    /// Dropout rate applied after every up-stage of decoder 2.
    pub dropout: f64,
    /// Fixed exchange (SimAM) in the T1w branch.
    pub fem: bool,
    /// Adaptive exchange (ECA + spatial attention) in the FA branch.
    pub aem: bool,
    /// Weights FA by the AEM coefficient instead of T1w.
    pub swap_aem_mixture: bool,
    /// Averages SimAM coefficients over space, one value per channel.
    pub simam_per_channel: bool,
    /// Seed of the parameter initializer.
    pub init_seed: u64,
    /// Initial foreground probability of the output heads; their biases
    /// start at `logit(head_prior)`. `0.5` gives zero biases.
    pub head_prior: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            widths: vec![16, 32, 64, 128, 256],
            classes: 4,
            simam_lambda: 1e-4,
            eca_gamma: 2.0,
            eca_b: 1.0,
            sa_kernel: 7,
            fusion_width: None,
            dropout: 0.3,
            fem: true,
            aem: true,
            swap_aem_mixture: false,
            simam_per_channel: false,
            init_seed: 0,
            head_prior: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 5 {
            return Err(Error::Config(format!(
                "widths must list a stem and 4 stages, got {} entries",
                self.widths.len()
            )));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "widths must be positive and strictly increasing: {:?}",
                self.widths
            )));
        }
        if self.classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("classes and in_channels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.simam_lambda <= 0.0 {
            return Err(Error::Config("simam_lambda must be > 0".into()));
        }
        if self.sa_kernel % 2 == 0 {
            return Err(Error::Config("sa_kernel must be odd".into()));
        }
        if !(self.head_prior > 0.0 && self.head_prior < 1.0) {
            return Err(Error::Config(format!("head_prior {} outside (0, 1)", self.head_prior)));
        }
        if self.eca_gamma <= 0.0 {
            return Err(Error::Config("eca_gamma must be > 0".into()));
        }
        Ok(())
    }

    pub fn deepest_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn fusion_width(&self) -> usize {
        self.fusion_width.unwrap_or_else(|| self.deepest_width())
    }
}

/// Adaptive ECA kernel: the largest odd integer not above
/// `|log2(C)/γ + b/γ|`, at least 1.
pub fn eca_kernel_size(channels: usize, gamma: f64, b: f64) -> usize {
    let t = ((channels as f64).log2() / gamma + b / gamma).abs().floor() as usize;
    let k = if t % 2 == 1 { t } else { t.saturating_sub(1) };
    k.max(1)
}
