use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, NormStyle};
use super::layers::{DecoderInputs, DecoderLayer, EncoderLayer};
use crate::attention::{AttentionMask, AttentionRegistry};
use crate::autograd::Var;
use crate::data::{Batch, PAD};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamId, ParamStore};
use crate::positional::{EncodingManager, Positions};
use crate::rng::SeedStream;
use crate::tensor::{Scalar, Tensor};

/// Encoder-decoder transformer owning its parameters.
pub struct Seq2SeqModel<S: Scalar> {
    config: ModelConfig,
    params: ParamStore<S>,
    src_embed: ParamId,
    tgt_embed: ParamId,
    encoder_encodings: EncodingManager<S>,
    decoder_encodings: EncodingManager<S>,
    encoder: Vec<EncoderLayer<S>>,
    encoder_norm: Option<LayerNorm>,
    decoder: Vec<DecoderLayer<S>>,
    decoder_norm: Option<LayerNorm>,
    generator: Linear,
}

/// Source-side tensors shared by every decode step.
pub struct SourceInputs<'a> {
    pub ids: &'a [usize],
    pub batch: usize,
    pub positions: &'a Positions,
    pub valid: &'a [bool],
}

impl<'a> SourceInputs<'a> {
    pub fn from_batch(b: &'a Batch) -> Self {
        Self {
            ids: &b.src_ids,
            batch: b.size,
            positions: &b.src_pos,
            valid: &b.src_valid,
        }
    }
}

fn embedding_table<S: Scalar>(rows: usize, d: usize, rng: &mut impl rand::Rng) -> Tensor<S> {
    let normal = Normal::new(0.0, (d as f64).powf(-0.5)).expect("positive std");
    Tensor::new(&[rows, d], (0..rows * d).map(|_| S::of(normal.sample(rng))).collect()).expect("sized")
}

impl<S: Scalar> Seq2SeqModel<S> {
    /// Builds with the default attention registry.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_with_registry(config, seed, &AttentionRegistry::default())
    }

    pub fn build_with_registry(config: &ModelConfig, seed: u64, registry: &AttentionRegistry<S>) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedStream::new(seed).named("init").rng();
        let mut params = ParamStore::new();
        let d = config.d_model;
        let src_embed = params.register("src_embed", embedding_table(config.src_vocab, d, &mut rng))?;
        let tgt_embed = params.register("tgt_embed", embedding_table(config.tgt_vocab, d, &mut rng))?;
        let managers = |prefix: &str, params: &mut ParamStore<S>, rng: &mut _| {
            EncodingManager::new(&config.encoding, params, prefix, d, config.n_heads, config.max_len, rng)
        };
        let encoder_encodings = managers("encoder", &mut params, &mut rng)?;
        let decoder_encodings = managers("decoder", &mut params, &mut rng)?;
        let encoder = (0..config.n_layers)
            .map(|i| EncoderLayer::new(config, registry, &mut params, &format!("encoder.layers.{i}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..config.n_layers)
            .map(|i| DecoderLayer::new(config, registry, &mut params, &format!("decoder.layers.{i}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (encoder_norm, decoder_norm) = match config.norm_style {
            NormStyle::Pre => (
                Some(LayerNorm::new(&mut params, "encoder.norm", d)?),
                Some(LayerNorm::new(&mut params, "decoder.norm", d)?),
            ),
            NormStyle::Post => (None, None),
        };
        let generator = Linear::new(&mut params, "generator", d, config.tgt_vocab, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            params,
            src_embed,
            tgt_embed,
            encoder_encodings,
            decoder_encodings,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            generator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::ContextOverflow {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    fn embed<'t>(&self, ctx: &Ctx<'t, S>, table: ParamId, ids: &[usize], batch: usize) -> Result<Var<'t, S>> {
        if batch == 0 || ids.len() % batch != 0 {
            return Err(Error::shape("embed", &[batch], &[ids.len()]));
        }
        let len = ids.len() / batch;
        self.check_len(len)?;
        let scale = S::of((self.config.d_model as f64).sqrt());
        Ok(ctx.param(table).embedding(ids, &[batch, len])?.scale(scale))
    }

    /// `[B, T_s]` source ids to memory `[B, T_s, d_model]`.
    pub fn encode<'t>(&self, ctx: &Ctx<'t, S>, src: &SourceInputs<'_>) -> Result<Var<'t, S>> {
        let x = self.embed(ctx, self.src_embed, src.ids, src.batch)?;
        let x = self.encoder_encodings.apply_pre_additive(ctx, x, src.positions)?;
        let mut x = ctx.dropout(x, self.config.dropout_rate)?;
        let len = src.ids.len() / src.batch;
        let mask = AttentionMask::padding(src.valid, src.batch, len)?;
        for layer in &self.encoder {
            x = layer.forward(ctx, x, &mask, src.positions, &self.encoder_encodings)?;
        }
        match &self.encoder_norm {
            Some(norm) => norm.forward(ctx, x),
            None => Ok(x),
        }
    }

    /// Target ids `[B, T_t]` against encoder memory; returns logits `[B, T_t, tgt_vocab]`.
    pub fn decode<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        tgt_ids: &[usize],
        tgt_pos: &Positions,
        tgt_valid: &[bool],
        memory: Var<'t, S>,
        src: &SourceInputs<'_>,
    ) -> Result<Var<'t, S>> {
        let batch = src.batch;
        let x = self.embed(ctx, self.tgt_embed, tgt_ids, batch)?;
        let len = tgt_ids.len() / batch;
        let x = self.decoder_encodings.apply_pre_additive(ctx, x, tgt_pos)?;
        let mut x = ctx.dropout(x, self.config.dropout_rate)?;
        let self_mask = AttentionMask::padding(tgt_valid, batch, len)?.and(&AttentionMask::causal(len))?;
        let cross_mask = AttentionMask::padding(src.valid, batch, len)?;
        let inputs = DecoderInputs {
            self_mask: &self_mask,
            cross_mask: &cross_mask,
            tgt_pos,
            src_pos: src.positions,
            memory,
        };
        for layer in &self.decoder {
            x = layer.forward(ctx, x, &inputs, &self.decoder_encodings)?;
        }
        if let Some(norm) = &self.decoder_norm {
            x = norm.forward(ctx, x)?;
        }
        self.generator.forward(ctx, x)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, S>, batch: &Batch) -> Result<Var<'t, S>> {
        let src = SourceInputs::from_batch(batch);
        let memory = self.encode(ctx, &src)?;
        self.decode(ctx, &batch.tgt_in, &batch.tgt_pos, &batch.tgt_valid, memory, &src)
    }

    /// Mean token cross-entropy over non-pad targets.
    pub fn loss<'t>(&self, ctx: &Ctx<'t, S>, batch: &Batch, label_smoothing: f64) -> Result<Var<'t, S>> {
        self.forward(ctx, batch)?
            .cross_entropy(&batch.tgt_out, Some(PAD), label_smoothing)
    }
}
