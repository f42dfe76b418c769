//! Lightweight spectrogram network: two stems, three stages of MCAC blocks
//! with strided transitions, global pooling, a 1×1 projection and a linear
//! head producing class logits.

pub mod blocks;
pub mod checkpoint;
pub mod layers;
pub mod mca;
pub mod model;
pub mod param;

pub use layers::Mode;
pub use model::{param_count, LsNet, LsNetConfig, INPUT_SIZE};
pub use param::{Module, NamedArray, Param, ParameterSet};
