//! Spiking neural networks with membrane-potential smoothing and temporally
//! adjacent subnetwork guidance, trained by backpropagation through time.
//!
//! The engine is generic over [`Real`] (`f32` for training, `f64` for
//! gradient checks) and every random draw comes from a seeded [`RngState`].

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod io;
pub mod network;
pub mod neuron;
pub mod numeric;
pub mod objective;
pub mod training;

pub use data::SpikeDataset;
pub use error::{Error, Result};
pub use network::{ForwardTrace, ModelParams, ModelSpec, Readout};
pub use neuron::{MembraneInit, NeuronConfig, SpikeFunction};
pub use numeric::{fmt_sig9, FloatMode, Real, RngState, Tensor};
pub use objective::{GuidanceConfig, GuidanceMode};
pub use training::{train, TrainConfig, TrainOutcome};
