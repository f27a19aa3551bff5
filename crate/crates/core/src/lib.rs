//! Dual-label collaborative learning for multi-modal cranial-nerve
//! parcellation from T1w and FA slices.

pub mod autograd;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod tractlabels;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use metrics::{AggregateMetrics, MetricsReport};
pub use model::{Dclnet, ModelConfig};
pub use phantom::{Manifest, PhantomConfig};
pub use trainer::{RunRecord, TrainConfig};
pub use volume::{Geometry, LabelVolume, ModalitySample, Volume3D};

/// Crate version, echoed into provenance records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
