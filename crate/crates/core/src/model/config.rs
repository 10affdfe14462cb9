use serde::{Deserialize, Serialize};

use crate::attention::FULL_ATTENTION;
use crate::autograd::Activation;
use crate::error::{Error, Result};
use crate::positional::EncodingSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormStyle {
    /// `x + dropout(inner(norm(x)))`, with a final norm after each stack.
    #[default]
    Pre,
    /// `norm(x + dropout(inner(x)))`.
    Post,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub encoding: EncodingSet,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub norm_style: NormStyle,
    pub attention_method: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy(20, 20)
    }
}

impl ModelConfig {
    /// Desk-scale preset: N=2, d_model=64, H=4, d_ff=128.
    pub fn toy(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            dropout_rate: 0.1,
            activation: Activation::Relu,
            encoding: EncodingSet::default(),
            src_vocab,
            tgt_vocab,
            max_len: 100,
            norm_style: NormStyle::Pre,
            attention_method: FULL_ATTENTION.to_string(),
        }
    }

    /// Full-size base preset: N=6, d_model=512, H=8, d_ff=2048.
    pub fn base(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            n_layers: 6,
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            ..Self::toy(src_vocab, tgt_vocab)
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn learned_rows(&self) -> usize {
        self.encoding.learned_max_positions.unwrap_or(self.max_len)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return fail("d_model and d_ff must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("n_heads ({}) must divide d_model ({})", self.n_heads, self.d_model));
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return fail("vocabulary sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.encoding.sinusoidal && self.d_model % 2 != 0 {
            return fail(format!("sinusoidal encoding needs even d_model, got {}", self.d_model));
        }
        if self.encoding.rotary && (self.d_k() < 2 || self.d_k() % 2 != 0) {
            return fail(format!("rotary encoding needs an even head dimension >= 2, got {}", self.d_k()));
        }
        if self.encoding.learned && self.learned_rows() == 0 {
            return fail("learned_max_positions must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count; see the crate README for the derivation.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let linear = |i: usize, o: usize| i * o + o;
        let mha = 4 * linear(d, d);
        let ffn = linear(d, self.d_ff) + linear(self.d_ff, d);
        let norm = 2 * d;
        let encoder_layer = mha + ffn + 2 * norm;
        let decoder_layer = 2 * mha + ffn + 3 * norm;
        let final_norms = match self.norm_style {
            NormStyle::Pre => 2 * norm,
            NormStyle::Post => 0,
        };
        let learned = if self.encoding.learned { 2 * self.learned_rows() * d } else { 0 };
        (self.src_vocab + self.tgt_vocab) * d
            + learned
            + self.n_layers * (encoder_layer + decoder_layer)
            + final_norms
            + linear(d, self.tgt_vocab)
    }
}
