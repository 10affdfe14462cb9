use rand::Rng;

use super::config::{ModelConfig, NormStyle};
use crate::attention::{AttentionMask, AttentionRegistry, MultiHeadAttention, MultiHeadConfig};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamStore};
use crate::positional::{AlibiMode, EncodingManager, Positions};
use crate::tensor::Scalar;

/// Position-wise `w2 · act(w1 · x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(store, &format!("{name}.w1"), d_model, d_ff, rng)?,
            w2: Linear::new(store, &format!("{name}.w2"), d_ff, d_model, rng)?,
            activation,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, ctx: &Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let h = self.w1.forward(ctx, x)?.activation(self.activation);
        self.w2.forward(ctx, h)
    }
}

/// Layer norm, residual connection and dropout around an exchangeable inner block.
#[derive(Clone, Debug)]
pub struct SublayerUnit {
    pub norm: LayerNorm,
    pub dropout_rate: f64,
    pub style: NormStyle,
}

impl SublayerUnit {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d_model: usize, dropout_rate: f64, style: NormStyle) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d_model)?,
            dropout_rate,
            style,
        })
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'t, S>,
        x: Var<'t, S>,
        inner: impl FnOnce(Var<'t, S>) -> Result<Var<'t, S>>,
    ) -> Result<Var<'t, S>> {
        let checked = |y: Var<'t, S>| {
            if y.shape() == x.shape() {
                Ok(y)
            } else {
                Err(Error::shape("sublayer inner block", &x.shape(), &y.shape()))
            }
        };
        match self.style {
            NormStyle::Pre => {
                let y = checked(inner(self.norm.forward(ctx, x)?)?)?;
                x.add(ctx.dropout(y, self.dropout_rate)?)
            }
            NormStyle::Post => {
                let y = checked(inner(x)?)?;
                self.norm.forward(ctx, x.add(ctx.dropout(y, self.dropout_rate)?)?)
            }
        }
    }
}

fn mha_config(config: &ModelConfig) -> MultiHeadConfig {
    MultiHeadConfig {
        d_model: config.d_model,
        n_heads: config.n_heads,
        dropout_rate: config.dropout_rate,
        attention_method: config.attention_method.clone(),
    }
}

pub struct EncoderLayer<S: Scalar> {
    pub self_attention: MultiHeadAttention<S>,
    pub feed_forward: FeedForward,
    pub attention_unit: SublayerUnit,
    pub feed_forward_unit: SublayerUnit,
}

impl<S: Scalar> EncoderLayer<S> {
    pub fn new(
        config: &ModelConfig,
        registry: &AttentionRegistry<S>,
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (d, p, style) = (config.d_model, config.dropout_rate, config.norm_style);
        Ok(Self {
            self_attention: MultiHeadAttention::new(mha_config(config), registry, store, &format!("{name}.self_attention"), rng)?,
            feed_forward: FeedForward::new(store, &format!("{name}.ffn"), d, config.d_ff, config.activation, rng)?,
            attention_unit: SublayerUnit::new(store, &format!("{name}.sublayer0"), d, p, style)?,
            feed_forward_unit: SublayerUnit::new(store, &format!("{name}.sublayer1"), d, p, style)?,
        })
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        x: Var<'t, S>,
        mask: &AttentionMask,
        positions: &Positions,
        encodings: &EncodingManager<S>,
    ) -> Result<Var<'t, S>> {
        let mode = Some(encodings.set().alibi_mode);
        let x = self.attention_unit.forward(ctx, x, |h| {
            self.self_attention
                .forward(ctx, h, h, Some(mask), positions, positions, encodings, mode)
        })?;
        self.feed_forward_unit
            .forward(ctx, x, |h| self.feed_forward.forward(ctx, h))
    }
}

pub struct DecoderLayer<S: Scalar> {
    pub self_attention: MultiHeadAttention<S>,
    pub cross_attention: MultiHeadAttention<S>,
    pub feed_forward: FeedForward,
    pub units: [SublayerUnit; 3],
}

/// Target-side inputs of one decoder pass.
pub struct DecoderInputs<'a, 't, S: Scalar> {
    pub self_mask: &'a AttentionMask,
    pub cross_mask: &'a AttentionMask,
    pub tgt_pos: &'a Positions,
    pub src_pos: &'a Positions,
    pub memory: Var<'t, S>,
}

impl<S: Scalar> DecoderLayer<S> {
    pub fn new(
        config: &ModelConfig,
        registry: &AttentionRegistry<S>,
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (d, p, style) = (config.d_model, config.dropout_rate, config.norm_style);
        Ok(Self {
            self_attention: MultiHeadAttention::new(mha_config(config), registry, store, &format!("{name}.self_attention"), rng)?,
            cross_attention: MultiHeadAttention::new(mha_config(config), registry, store, &format!("{name}.cross_attention"), rng)?,
            feed_forward: FeedForward::new(store, &format!("{name}.ffn"), d, config.d_ff, config.activation, rng)?,
            units: [
                SublayerUnit::new(store, &format!("{name}.sublayer0"), d, p, style)?,
                SublayerUnit::new(store, &format!("{name}.sublayer1"), d, p, style)?,
                SublayerUnit::new(store, &format!("{name}.sublayer2"), d, p, style)?,
            ],
        })
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        x: Var<'t, S>,
        inputs: &DecoderInputs<'_, 't, S>,
        encodings: &EncodingManager<S>,
    ) -> Result<Var<'t, S>> {
        let x = self.units[0].forward(ctx, x, |h| {
            self.self_attention.forward(
                ctx,
                h,
                h,
                Some(inputs.self_mask),
                inputs.tgt_pos,
                inputs.tgt_pos,
                encodings,
                Some(AlibiMode::Causal),
            )
        })?;
        let x = self.units[1].forward(ctx, x, |h| {
            self.cross_attention.forward(
                ctx,
                h,
                inputs.memory,
                Some(inputs.cross_mask),
                inputs.tgt_pos,
                inputs.src_pos,
                encodings,
                None,
            )
        })?;
        self.units[2].forward(ctx, x, |h| self.feed_forward.forward(ctx, h))
    }
}
