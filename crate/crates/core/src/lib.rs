//! Label-efficient continual learning for rare-event detection on streaming
//! multichannel signals.
//!
//! A pretrained two-class classifier watches a stream window by window. It
//! asks for labels only on windows it is unsure about (high prediction
//! entropy) or flags as events, accumulates them, and once enough have piled
//! up it labels them, stores them in a class-balanced replay buffer, and
//! fine-tunes. Baselines, event-level scoring, and an experiment harness over
//! synthetic drifting streams are included.

pub mod buffer;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod scalar;
pub mod scoring;
pub mod signal;
pub mod trainer;

pub use buffer::{BufferEntry, ReplayBuffer};
pub use engine::{AnnotationOracle, EngineConfig, Reason, RunResult, Strategy};
pub use error::{Error, Result};
pub use model::{Architecture, Classifier, Mode, Prediction};
pub use scalar::Scalar;
pub use scoring::{MetricsReport, ScoringConfig};
pub use signal::{EventInterval, SampleBlock, Window, WindowGeometry};
pub use trainer::{fine_tune, TrainConfig, TrainReport};
