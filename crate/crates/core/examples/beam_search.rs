//! Greedy versus beam decoding on a hand-built bigram model where the
//! greedy first step leads into a poor continuation.

use forge::generate::{beam_search, greedy_decode, DecodeOptions, StepModel};
use forge::Result;

const WORDS: [&str; 5] = ["<bos>", "<eos>", "a", "b", "c"];

/// Next-token probabilities conditioned on the previous token only.
struct Bigram;

impl StepModel for Bigram {
    fn vocab_size(&self) -> usize {
        5
    }

    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let probs: [f64; 5] = match *p.last().unwrap() {
                    0 => [0.0, 0.0, 0.45, 0.35, 0.2],
                    // "a" is likely first but every continuation is weak
                    2 => [0.0, 0.34, 0.33, 0.0, 0.33],
                    3 => [0.0, 0.9, 0.05, 0.0, 0.05],
                    _ => [0.0, 0.6, 0.2, 0.1, 0.1],
                };
                probs.iter().map(|p| p.ln()).collect()
            })
            .collect())
    }
}

fn show(tokens: &[usize]) -> String {
    tokens.iter().map(|&t| WORDS[t]).collect::<Vec<_>>().join(" ")
}

fn main() -> Result<()> {
    let opts = DecodeOptions { max_len: 6, bos: 0, eos: 1, banned: vec![0] };
    println!("greedy: {}", show(&greedy_decode(&Bigram, &opts)?));
    for width in [1, 2, 4] {
        let beam = beam_search(&Bigram, width, 0.0, &opts)?;
        let best = beam.best().expect("non-empty beam");
        println!("beam {width}: {}  (log p = {:.4})", show(&best.tokens), best.log_prob);
    }
    println!("\nfinal width-4 beam, length penalty 0.6:");
    let beam = beam_search(&Bigram, 4, 0.6, &opts)?;
    for h in &beam.hypotheses {
        println!("  {:<14} log p {:.4}  normalized {:.4}", show(&h.tokens), h.log_prob, h.normalized(0.6));
    }
    Ok(())
}
