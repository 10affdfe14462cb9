//! Saves a model, reloads it, and checks the bytes survive a round trip.

use forge::checkpoint;
use forge::data::Vocab;
use forge::model::{ModelConfig, Seq2SeqModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("forge-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let (first, second) = (dir.join("a.ckpt"), dir.join("b.ckpt"));

    let cfg = ModelConfig::toy(20, 20);
    let model = Seq2SeqModel::<f32>::build(&cfg, 42)?;
    let vocab = Vocab::toy(20);
    checkpoint::save(&first, &model, &vocab, &vocab)?;

    let loaded = checkpoint::load(&first)?;
    checkpoint::save(&second, &loaded.model, &loaded.src_vocab, &loaded.tgt_vocab)?;
    let (a, b) = (std::fs::read(&first)?, std::fs::read(&second)?);
    println!("{} parameters, {} bytes", model.param_count(), a.len());
    println!("formula count {}", cfg.param_count());
    println!("round trip byte-identical: {}", a == b);
    for p in loaded.model.params().iter().take(6) {
        println!("  {:<40} {:?}", p.name, p.value.shape());
    }
    println!("  ... {} tensors", loaded.model.params().len());
    Ok(())
}
