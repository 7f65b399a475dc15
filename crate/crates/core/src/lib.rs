//! Flow-matching policies over action chunks, trained for one-step sampling
//! with a frequency-domain consistency objective.
//!
//! The pieces, bottom up: a small reverse-mode autodiff engine
//! ([`diffcore`]), the DCT and chunk similarity measures ([`spectral`]), the
//! velocity network ([`policynet`]), the training objectives ([`flowloss`]),
//! Euler sampling ([`sampler`]), synthetic imitation data ([`synthdata`]),
//! the optimization loop and checkpoints ([`trainer`]), and evaluation
//! ([`evalkit`]).

pub mod chunk;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod flowloss;
pub mod policynet;
pub mod sampler;
pub mod spectral;
pub mod synthdata;
pub mod trainer;

pub use chunk::ActionChunk;
pub use diffcore::{Gradients, Recording, Tensor};
pub use error::{Error, Result};
pub use evalkit::{MetricsReport, PointMassEnv, Policy};
pub use flowloss::{DetachPolicy, LossBreakdown, LossConfig, TimeSampling, TimeTriple};
pub use policynet::{ModelDims, VelocityField, VelocityModel};
pub use spectral::{SimKind, SimMode};
pub use synthdata::{Dataset, NormStats, Task};
pub use trainer::{Checkpoint, TrainConfig, Trainer};
