//! Federated open-set RF emitter authentication.
//!
//! The pipeline synthesizes drone-controller IQ windows ([`rfgen`]), turns
//! them into 128×128 spectrograms ([`specgram`]), trains a lightweight
//! attention CNN ([`lsnet`]) with the class-anchor loss ([`caloss`]) either
//! centrally ([`train`]) or through zero-trust federated averaging
//! ([`fedsim`]), and scores closed-set accuracy and unknown-emitter
//! rejection ([`metrics`]). [`harness`] wires it into reproducible runs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caloss;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod lsnet;
pub mod metrics;
pub mod rfgen;
pub mod rng;
pub mod specgram;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lsnet::{LsNet, LsNetConfig, Mode, ParameterSet};
pub use tensor::{Scalar, Tensor};
