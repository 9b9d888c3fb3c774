//! Problem-agnostic speech encoder: a sinc-fronted convolutional encoder
//! trained by seven self-supervised workers, with the DSP targets, trainer,
//! and probing harness around it.

pub mod dsp;
pub mod encoder;
pub mod error;
pub mod io;
pub mod nn;
pub mod probe;
pub mod trainer;
pub mod workers;

pub use error::{Error, Result};
