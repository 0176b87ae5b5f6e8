//! Spiking neural networks built from adaptive leaky integrate-and-fire
//! neurons, trained with surrogate gradients through time.

pub mod arch;
pub mod checkpoint;
pub mod classifier;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod neuron;
pub mod numerics;
pub mod svae;
pub mod taid;

pub use error::{Error, Result};
