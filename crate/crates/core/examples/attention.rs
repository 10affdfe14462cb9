//! Multi-head attention with a causal mask, and a custom attention method
//! plugged in through the registry.

use std::sync::Arc;

use forge::attention::{
    scaled_dot_product, AttentionMask, AttentionMethod, AttentionOutput, AttentionRegistry, MultiHeadAttention,
    MultiHeadConfig,
};
use forge::autograd::{Tape, Var};
use forge::nn::{Ctx, ParamStore};
use forge::positional::{EncodingManager, EncodingSet, Positions, ScoreBias};
use forge::rng::SeedStream;
use forge::tensor::{Scalar, Tensor};
use forge::Result;

/// Full attention restricted to the `window` most recent keys.
struct LocalWindow {
    window: usize,
}

impl<S: Scalar> AttentionMethod<S> for LocalWindow {
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
        let (tq, tk) = (q.shape()[2], k.shape()[2]);
        let allow = (0..tq).flat_map(|i| (0..tk).map(move |j| j <= i && i - j < self.window)).collect();
        let local = AttentionMask::new(forge::attention::MaskKind::Causal, [1, 1, tq, tk], allow)?;
        let mask = match mask {
            Some(m) => m.and(&local)?,
            None => local,
        };
        scaled_dot_product(ctx, q, k, v, Some(&mask), bias, dropout_rate)
    }
}

fn print_weights(label: &str, w: &Tensor<f64>) {
    let t = w.shape()[3];
    println!("{label} (head 0):");
    for row in w.data()[..t * t].chunks(t) {
        println!("  {}", row.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" "));
    }
}

fn main() -> Result<()> {
    let mut registry = AttentionRegistry::<f64>::new();
    registry.register("local2", Arc::new(LocalWindow { window: 2 }))?;
    println!("registered methods: {:?}", registry.names());

    let mut rng = SeedStream::new(3).rng();
    let x = Tensor::new(&[1, 5, 8], (0..40).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect())?;
    let pos = Positions::sequential(1, 5);
    let causal = AttentionMask::causal(5);

    for method in ["full", "local2"] {
        let mut store = ParamStore::<f64>::new();
        let cfg = MultiHeadConfig { d_model: 8, n_heads: 2, dropout_rate: 0.0, attention_method: method.into() };
        let mha = MultiHeadAttention::new(cfg, &registry, &mut store, "attn", &mut rng)?;
        let enc = EncodingManager::new(&EncodingSet::none(), &mut store, "enc", 8, 2, 16, &mut rng)?;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let xv = ctx.constant(x.clone());
        let (out, weights) = mha.forward_with_weights(&ctx, xv, xv, Some(&causal), &pos, &pos, &enc, None)?;
        print_weights(&format!("{method} attention weights"), &weights.to_tensor());
        println!("  output shape {:?}\n", out.shape());
    }
    Ok(())
}
