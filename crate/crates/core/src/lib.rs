//! Surrogate modelling of transient finite-element simulations with
//! convolutional LSTMs.

pub mod cli;
pub mod config;
pub mod convlstm;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod metrics;
pub mod nelo;
pub mod plot;
pub mod predict;
pub mod store;
pub mod surrogate;
pub mod tensor;

pub use error::{Error, Result};
