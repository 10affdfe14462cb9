//! Encoder-decoder transformer toolkit with pluggable positional encodings,
//! attention methods, beam search, BLEU scoring and architecture search.

pub mod attention;
pub mod autograd;
pub mod bleu;
pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod model;
pub mod nas;
pub mod nn;
pub mod optim;
pub mod positional;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
