#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cascade;
pub mod casa;
pub mod cnn;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod mfcc;
pub mod synth;

pub use error::{Error, Result};
