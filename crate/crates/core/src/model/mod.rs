//! The dual-label network: modality-exchange encoder, cross fusion and two
//! decoders producing sigmoid probability maps.

mod attention;
mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod fusion;
mod layers;
mod net;
mod params;

pub use attention::{exchange_mix, simam, Eca, SpatialAttention};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{eca_kernel_size, ModelConfig};
pub use decoder::Decoder;
pub use encoder::{Encoder, EncoderOutput, EncoderState, ExchangeStage, StepOutput};
pub use fusion::{CrossFusion, FusionOutput};
pub use layers::{BatchNorm, Conv, ConvBlock};
pub use net::{Dclnet, NetOutput, PredictionPair};
pub use params::{apply_bn_updates, Forward, Init, Mode, ParamEntry, ParamId, ParamStore};

