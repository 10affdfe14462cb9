//! The four positional encodings and the hook counters that track where
//! each one enters the model.

use forge::autograd::Tape;
use forge::data::Batch;
use forge::model::{ModelConfig, Seq2SeqModel};
use forge::nn::Ctx;
use forge::positional::{
    alibi_bias, rotary_transform, sinusoidal_encoding, AlibiMode, AlibiSlopes, EncodingSet, Positions, StrategyKind,
};
use forge::tensor::Tensor;

fn main() -> forge::Result<()> {
    let pos = Positions::sequential(1, 4);
    let table = sinusoidal_encoding::<f64>(&pos, 8, 10_000.0)?;
    println!("sinusoidal rows (d=8):");
    for row in table.data().chunks(8) {
        println!("  {}", row.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" "));
    }

    let slopes = AlibiSlopes::new(8)?;
    println!("\nALiBi slopes, 8 heads: {:?}", slopes.slopes());
    let p: Vec<f64> = (0..5).map(f64::from).collect();
    let bias = alibi_bias::<f64>(&p, &p, &slopes, AlibiMode::Causal);
    println!("head 0 causal bias, query at position 4: {:?}", &bias.data()[20..25]);

    // rotated q·k depends on the offset m - n only
    let q = Tensor::<f64>::new(&[1, 1, 1, 4], vec![0.3, -1.0, 0.8, 0.5])?;
    let k = Tensor::<f64>::new(&[1, 1, 1, 4], vec![1.2, 0.4, -0.6, 0.9])?;
    println!("\nrotary q·k at offset 2:");
    for (m, n) in [(2.0, 0.0), (7.0, 5.0), (40.0, 38.0)] {
        let tape = Tape::new();
        let (qp, kp) = (Positions::new(1, 1, vec![m])?, Positions::new(1, 1, vec![n])?);
        let (a, b) = rotary_transform(tape.constant(q.clone()), tape.constant(k.clone()), &qp, &kp, 10_000.0)?;
        let dot: f64 = a.value().data().iter().zip(b.value().data()).map(|(x, y)| x * y).sum();
        println!("  m={m:>4} n={n:>4}  {dot:.12}");
    }

    let mut cfg = ModelConfig::toy(12, 12);
    cfg.encoding = EncodingSet::all();
    let model = Seq2SeqModel::<f64>::build(&cfg, 0)?;
    let batch = Batch::from_pairs(&[(vec![4, 5, 6], vec![7, 8, 9])])?;
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, model.params());
    model.forward(&ctx, &batch)?;
    let c = ctx.counters();
    println!("\none forward pass, all four encodings, N={}:", cfg.n_layers);
    println!("  attention calls      {}", c.attention_calls());
    println!("  q/k hook calls       {}", c.qk_calls());
    println!("  score-bias calls     {}", c.score_bias_calls());
    println!("  embedding hook calls {}", c.pre_additive_calls());
    for kind in [StrategyKind::Sinusoidal, StrategyKind::Learned, StrategyKind::Rotary, StrategyKind::Alibi] {
        println!("  {kind:?} applied {} times", c.applied(kind));
    }
    Ok(())
}
