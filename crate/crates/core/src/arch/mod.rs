//! The six-stage classifier: three convolutional stages, three parallel
//! vision-Mamba stages and a spatial/channel attention bridge feeding a
//! sigmoid head.

pub mod calibrate;
pub mod checkpoint;
mod config;
pub mod layers;
mod model;

pub use config::{ChannelShare, ModelConfig, DEFAULT_CHANNELS, PUBLISHED_PARAM_COUNT, STAGES};
pub use model::{count_parameters, ForwardOutput, Mode, Model, ParamBreakdown, BN_MOMENTUM};
