//! Spiking and conventional network training, ANN-to-SNN conversion, and
//! membership-inference auditing at desk scale.

pub mod attacks;
pub mod augment;
pub mod conversion;
pub mod error;
pub mod eventdata;
pub mod harness;
pub mod netmodel;
pub mod neurons;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
