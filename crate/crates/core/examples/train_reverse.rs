//! Trains the toy preset on sequence reversal and reports held-out accuracy.
//!
//! cargo run --release --example train_reverse -- [epochs] [lr_factor] [dropout] [batch_size] [warmup_steps] [seed]

use std::time::Instant;

use forge::model::{ModelConfig, Seq2SeqModel};
use forge::train::{evaluate, prepare_data, train, DataConfig, TrainingConfig};

fn main() -> forge::Result<()> {
    let arg = |i: usize| std::env::args().nth(i);
    let epochs = arg(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let lr_factor = arg(2).and_then(|a| a.parse().ok()).unwrap_or(0.3);
    let seed = arg(6).and_then(|a| a.parse().ok()).unwrap_or(7);
    let mut config = ModelConfig::toy(20, 20);
    config.dropout_rate = arg(3).and_then(|a| a.parse().ok()).unwrap_or(0.1);
    let data = prepare_data(&DataConfig::default(), config.max_len, seed)?;
    let mut model = Seq2SeqModel::<f32>::build(&config, seed)?;
    println!("parameters: {}", model.param_count());

    let training = TrainingConfig {
        epochs,
        batch_size: arg(4).and_then(|a| a.parse().ok()).unwrap_or(32),
        warmup_steps: arg(5).and_then(|a| a.parse().ok()).unwrap_or(400),
        seed: Some(seed),
        lr_factor,
        ..Default::default()
    };
    let start = Instant::now();
    train(&mut model, &data, &training, seed, |m, _| {
        println!(
            "epoch {:>2}  step {:>4}  loss {:.4}  val BLEU {:6.2}  ({:.0?})",
            m.epoch,
            m.step,
            m.train_loss,
            m.val_bleu,
            start.elapsed()
        );
        Ok(())
    })?;
    let report = evaluate(&model, &data.valid)?;
    println!("held-out exact reversals: {:.1}%", 100.0 * report.exact_match);
    Ok(())
}
