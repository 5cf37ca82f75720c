//! Lightweight binaural complex convolutional network (LBCCN) for low-latency
//! binaural speech enhancement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
