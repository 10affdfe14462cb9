#![allow(dead_code)]

use forge::data::{Batch, Pair};
use forge::generate::StepModel;
use forge::model::ModelConfig;
use forge::positional::EncodingSet;
use forge::tensor::Tensor;
use forge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Next-token distributions drawn from a hash of (seed, prefix), so the same
/// prefix always sees the same distribution.
pub struct RiggedModel {
    pub vocab: usize,
    pub seed: u64,
    /// Logit scale; larger values give peakier distributions.
    pub sharpness: f64,
}

impl RiggedModel {
    pub fn new(vocab: usize, seed: u64) -> Self {
        Self { vocab, seed, sharpness: 3.0 }
    }

    pub fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        // fixed mixing so the distributions do not depend on the toolchain
        let h = prefix.iter().fold(self.seed ^ 0x243f_6a88_85a3_08d3, |h, &t| {
            (h ^ t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31)
        });
        let mut r = rng(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * r.gen_range(-1.0..1.0)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        logits.iter().map(|l| l - z).collect()
    }
}

impl StepModel for RiggedModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.log_probs(p)).collect())
    }
}

pub fn tiny_config(n_layers: usize, d_model: usize, n_heads: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers,
        d_model,
        n_heads,
        d_ff: 2 * d_model,
        dropout_rate: 0.0,
        src_vocab: vocab,
        tgt_vocab: vocab,
        max_len: 32,
        ..ModelConfig::toy(vocab, vocab)
    }
    .with_encoding(EncodingSet::none())
}

pub trait WithEncoding {
    fn with_encoding(self, set: EncodingSet) -> Self;
}

impl WithEncoding for ModelConfig {
    fn with_encoding(mut self, set: EncodingSet) -> Self {
        self.encoding = set;
        self
    }
}

/// Random pairs over non-reserved ids `4..vocab`.
pub fn random_pairs(seed: u64, n: usize, vocab: usize, len: std::ops::RangeInclusive<usize>) -> Vec<Pair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let ls = r.gen_range(len.clone());
            let lt = r.gen_range(len.clone());
            (
                (0..ls).map(|_| r.gen_range(4..vocab)).collect(),
                (0..lt).map(|_| r.gen_range(4..vocab)).collect(),
            )
        })
        .collect()
}

pub fn batch(pairs: &[Pair]) -> Batch {
    Batch::from_pairs(pairs).unwrap()
}
