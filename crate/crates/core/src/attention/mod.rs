//! Scaled dot-product attention, the pluggable attention-method registry, and
//! multi-head attention.

mod mask;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mask::{AttentionMask, MaskKind};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::positional::{AlibiMode, EncodingManager, Positions, ScoreBias};
use crate::tensor::Scalar;

pub const FULL_ATTENTION: &str = "full";

pub struct AttentionOutput<'t, S: Scalar> {
    /// `[B, H, T_q, d_k]`
    pub output: Var<'t, S>,
    /// `[B, H, T_q, T_k]`, before dropout.
    pub weights: Var<'t, S>,
}

/// An attention computation over already split heads.
pub trait AttentionMethod<S: Scalar>: Send + Sync {
    #[allow(clippy::too_many_arguments)]
    fn attend<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        q: Var<'t, S>,
        k: Var<'t, S>,
        v: Var<'t, S>,
        mask: Option<&AttentionMask>,
        bias: &ScoreBias<'_, S>,
        dropout_rate: f64,
    ) -> Result<AttentionOutput<'t, S>>;
}

/// Dense `softmax(QKᵀ/√d_k + bias) V`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FullAttention;

impl<S: Scalar> AttentionMethod<S> for FullAttention {
    fn attend<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        q: Var<'t, S>,
        k: Var<'t, S>,
        v: Var<'t, S>,
        mask: Option<&AttentionMask>,
        bias: &ScoreBias<'_, S>,
        dropout_rate: f64,
    ) -> Result<AttentionOutput<'t, S>> {
        scaled_dot_product(ctx, q, k, v, mask, bias, dropout_rate)
    }
}

/// Scores `QKᵀ/√d_k`, then the score-bias hook, then the mask, softmax,
/// dropout on the weights, and the product with `V`.
pub fn scaled_dot_product<'t, S: Scalar>(
    ctx: &Ctx<'t, S>,
    q: Var<'t, S>,
    k: Var<'t, S>,
    v: Var<'t, S>,
    mask: Option<&AttentionMask>,
    bias: &ScoreBias<'_, S>,
    dropout_rate: f64,
) -> Result<AttentionOutput<'t, S>> {
    let d_k = *q.shape().last().unwrap_or(&0);
    if d_k == 0 {
        return Err(Error::InvalidShape {
            shape: q.shape(),
            reason: "empty head dimension".into(),
        });
    }
    let scores = q.matmul(k.transpose_last()?)?.scale(S::of(1.0 / (d_k as f64).sqrt()));
    let scores = bias.apply(ctx, scores)?;
    let scores = match mask {
        None => scores,
        Some(m) => {
            m.validate()?;
            scores.masked_fill(m.data(), m.shape(), S::neg_infinity())?
        }
    };
    let axis = scores.shape().len() - 1;
    let weights = scores.softmax(axis)?;
    let dropped = ctx.dropout(weights, dropout_rate)?;
    Ok(AttentionOutput {
        output: dropped.matmul(v)?,
        weights,
    })
}

/// Named attention methods; `"full"` is always present.
pub struct AttentionRegistry<S: Scalar> {
    methods: BTreeMap<String, Arc<dyn AttentionMethod<S>>>,
}

impl<S: Scalar> Default for AttentionRegistry<S> {
    fn default() -> Self {
        let mut methods: BTreeMap<String, Arc<dyn AttentionMethod<S>>> = BTreeMap::new();
        methods.insert(FULL_ATTENTION.to_string(), Arc::new(FullAttention));
        Self { methods }
    }
}

impl<S: Scalar> AttentionRegistry<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, method: Arc<dyn AttentionMethod<S>>) -> Result<()> {
        if self.methods.contains_key(name) {
            return Err(Error::DuplicateAttentionMethod(name.to_string()));
        }
        self.methods.insert(name.to_string(), method);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<Arc<dyn AttentionMethod<S>>> {
        self.methods
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownAttentionMethod {
                name: name.to_string(),
                registered: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.methods.keys().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub attention_method: String,
}

impl MultiHeadConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_heads ({}) must divide d_model ({})",
                self.n_heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

pub struct MultiHeadAttention<S: Scalar> {
    pub config: MultiHeadConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    method: Arc<dyn AttentionMethod<S>>,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(
        config: MultiHeadConfig,
        registry: &AttentionRegistry<S>,
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let method = registry.lookup(&config.attention_method)?;
        let d = config.d_model;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d, d, rng)?,
            config,
            method,
        })
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * Linear::param_count(d_model, d_model)
    }

    fn split_heads<'t>(&self, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        let (b, t) = (shape[0], shape[1]);
        x.reshape(&[b, t, self.config.n_heads, self.config.d_k()])?
            .permute(&[0, 2, 1, 3])
    }

    /// `[B, T_q, d_model]` queries against `[B, T_k, d_model]` keys/values.
    /// `alibi_mode` is `None` for attention calls that take no ALiBi bias.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        x_q: Var<'t, S>,
        x_kv: Var<'t, S>,
        mask: Option<&AttentionMask>,
        q_pos: &Positions,
        k_pos: &Positions,
        encodings: &EncodingManager<S>,
        alibi_mode: Option<AlibiMode>,
    ) -> Result<Var<'t, S>> {
        self.forward_with_weights(ctx, x_q, x_kv, mask, q_pos, k_pos, encodings, alibi_mode)
            .map(|(out, _)| out)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_with_weights<'t>(
        &self,
        ctx: &Ctx<'t, S>,
        x_q: Var<'t, S>,
        x_kv: Var<'t, S>,
        mask: Option<&AttentionMask>,
        q_pos: &Positions,
        k_pos: &Positions,
        encodings: &EncodingManager<S>,
        alibi_mode: Option<AlibiMode>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let (qs, ks) = (x_q.shape(), x_kv.shape());
        if qs.len() != 3 || ks.len() != 3 || qs[2] != self.config.d_model || ks[2] != self.config.d_model || qs[0] != ks[0] {
            return Err(Error::shape("multi_head_attention", &qs, &ks));
        }
        ctx.counters().record_attention_call();
        let q = self.split_heads(self.query.forward(ctx, x_q)?)?;
        let k = self.split_heads(self.key.forward(ctx, x_kv)?)?;
        let v = self.split_heads(self.value.forward(ctx, x_kv)?)?;
        let (q, k) = encodings.apply_qk(ctx, q, k, q_pos, k_pos)?;
        let hook = ScoreBias::new(encodings, q_pos, k_pos, alibi_mode);
        let out = self
            .method
            .attend(ctx, q, k, v, mask, &hook, self.config.dropout_rate)?;
        let merged = out
            .output
            .permute(&[0, 2, 1, 3])?
            .reshape(&[qs[0], qs[1], self.config.d_model])?;
        Ok((self.output.forward(ctx, merged)?, out.weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::positional::EncodingSet;
    use crate::rng::SeedStream;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn sdpa(q: Tensor<f64>, k: Tensor<f64>, v: Tensor<f64>, mask: Option<&AttentionMask>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let store = ParamStore::new();
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let out = scaled_dot_product(&ctx, tape.constant(q), tape.constant(k), tape.constant(v), mask, &ScoreBias::none(), 0.0)?;
        Ok((out.output.to_tensor(), out.weights.to_tensor()))
    }

    #[test]
    fn single_key_returns_its_value() {
        let (o, w) = sdpa(t(&[1, 1, 1, 2], &[0.3, -2.0]), t(&[1, 1, 1, 2], &[1.0, 4.0]), t(&[1, 1, 1, 2], &[7.0, -3.5]), None).unwrap();
        assert_eq!(o.data(), &[7.0, -3.5]);
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn equal_scores_average_unmasked_values() {
        let q = t(&[1, 1, 1, 2], &[0.0, 0.0]);
        let k = t(&[1, 1, 3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let v = t(&[1, 1, 3, 1], &[3.0, 6.0, 100.0]);
        let mask = AttentionMask::padding(&[true, true, false], 1, 1).unwrap();
        let (o, w) = sdpa(q, k, v, Some(&mask)).unwrap();
        assert_eq!(w.data(), &[0.5, 0.5, 0.0]);
        assert!((o.data()[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn hand_softmax_example() {
        let q = t(&[1, 1, 1, 1], &[1.0]);
        let k = t(&[1, 1, 2, 1], &[0.0, 4f64.ln()]);
        let v = t(&[1, 1, 2, 1], &[0.0, 1.0]);
        let (o, w) = sdpa(q, k, v, None).unwrap();
        assert!((w.data()[0] - 0.2).abs() < 1e-12 && (w.data()[1] - 0.8).abs() < 1e-12);
        assert!((o.data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mask = AttentionMask::new(MaskKind::Padding, [1, 1, 1, 2], vec![false, false]).unwrap();
        let z = t(&[1, 1, 1, 2], &[0.0, 0.0]);
        let kz = t(&[1, 1, 2, 2], &[0.0; 4]);
        let err = sdpa(z.clone(), kz.clone(), kz, Some(&mask)).unwrap_err();
        assert!(matches!(err, Error::FullyMasked { .. }), "{err}");
    }

    #[test]
    fn masked_value_rows_do_not_leak() {
        let mut rng = SeedStream::new(5).rng();
        let mut rand = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (q, k, v) = (rand(2 * 3 * 4), rand(2 * 5 * 4), rand(2 * 5 * 4));
        let mask = AttentionMask::padding(&[true, true, true, false, false], 1, 3).unwrap();
        let base = sdpa(t(&[1, 2, 3, 4], &q), t(&[1, 2, 5, 4], &k), t(&[1, 2, 5, 4], &v), Some(&mask)).unwrap().0;
        let mut v2 = v.clone();
        for h in 0..2 {
            for j in 3..5 {
                for d in 0..4 {
                    v2[(h * 5 + j) * 4 + d] = 1e3 * (d as f64 + 1.0);
                }
            }
        }
        let pert = sdpa(t(&[1, 2, 3, 4], &q), t(&[1, 2, 5, 4], &k), t(&[1, 2, 5, 4], &v2), Some(&mask)).unwrap().0;
        assert_eq!(base.data(), pert.data());
    }

    struct Uniform;

    impl AttentionMethod<f64> for Uniform {
        fn attend<'t>(
            &self,
            ctx: &Ctx<'t, f64>,
            q: Var<'t, f64>,
            k: Var<'t, f64>,
            v: Var<'t, f64>,
            mask: Option<&AttentionMask>,
            bias: &ScoreBias<'_, f64>,
            dropout_rate: f64,
        ) -> Result<AttentionOutput<'t, f64>> {
            scaled_dot_product(ctx, q.scale(0.0), k, v, mask, bias, dropout_rate)
        }
    }

    #[test]
    fn registry_lookup_and_duplicates() {
        let mut reg = AttentionRegistry::<f64>::new();
        assert!(reg.lookup("full").is_ok());
        reg.register("uniform", Arc::new(Uniform)).unwrap();
        assert!(reg.lookup("uniform").is_ok());
        assert!(matches!(reg.register("full", Arc::new(FullAttention)), Err(Error::DuplicateAttentionMethod(_))));
        let err = reg.lookup("longformer").err().unwrap();
        assert!(err.to_string().contains("full, uniform"), "{err}");
    }

    fn mha(h: usize, d: usize) -> (ParamStore<f64>, MultiHeadAttention<f64>, EncodingManager<f64>) {
        let mut store = ParamStore::new();
        let mut rng = SeedStream::new(11).rng();
        let cfg = MultiHeadConfig {
            d_model: d,
            n_heads: h,
            dropout_rate: 0.0,
            attention_method: FULL_ATTENTION.into(),
        };
        let m = MultiHeadAttention::new(cfg, &AttentionRegistry::new(), &mut store, "attn", &mut rng).unwrap();
        let enc = EncodingManager::new(&EncodingSet::none(), &mut store, "pos", d, h, 16, &mut rng).unwrap();
        (store, m, enc)
    }

    #[test]
    fn single_head_with_identity_projections_is_plain_attention() {
        let d = 4;
        let (mut store, m, enc) = mha(1, d);
        for lin in ["query", "key", "value", "output"] {
            store.set(&format!("attn.{lin}.weight"), Tensor::eye(d)).unwrap();
        }
        let x: Vec<f64> = (0..2 * 3 * d).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let xv = tape.constant(t(&[2, 3, d], &x));
        let pos = Positions::sequential(2, 3);
        let out = m.forward(&ctx, xv, xv, None, &pos, &pos, &enc, None).unwrap().to_tensor();
        let (want, _) = {
            let x4 = t(&[2, 1, 3, d], &x);
            sdpa(x4.clone(), x4.clone(), x4, None).unwrap()
        };
        assert_eq!(out.data(), want.data());
    }

    #[test]
    fn output_shape_for_every_head_count() {
        for h in [1, 2, 4, 8] {
            let (store, m, enc) = mha(h, 8);
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, &store);
            let xq = tape.constant(Tensor::full(&[2, 3, 8], 0.1));
            let xk = tape.constant(Tensor::full(&[2, 5, 8], -0.2));
            let out = m
                .forward(&ctx, xq, xk, None, &Positions::sequential(2, 3), &Positions::sequential(2, 5), &enc, None)
                .unwrap();
            assert_eq!(out.shape(), vec![2, 3, 8]);
        }
    }

    #[test]
    fn non_dividing_head_count_rejected() {
        let cfg = MultiHeadConfig {
            d_model: 10,
            n_heads: 4,
            dropout_rate: 0.0,
            attention_method: FULL_ATTENTION.into(),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_method_rejected_at_construction() {
        let mut store = ParamStore::<f64>::new();
        let cfg = MultiHeadConfig {
            d_model: 4,
            n_heads: 2,
            dropout_rate: 0.0,
            attention_method: "bigbird".into(),
        };
        let mut rng = SeedStream::new(0).rng();
        let err = MultiHeadAttention::new(cfg, &AttentionRegistry::new(), &mut store, "a", &mut rng).err().unwrap();
        assert!(err.to_string().contains("registered: full"), "{err}");
    }
}
