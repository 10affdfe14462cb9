mod config;
mod layers;
mod seq2seq;

pub use config::{ModelConfig, NormStyle};
pub use layers::{DecoderInputs, DecoderLayer, EncoderLayer, FeedForward, SublayerUnit};
pub use seq2seq::{Seq2SeqModel, SourceInputs};
