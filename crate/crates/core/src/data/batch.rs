use rand::seq::SliceRandom;

use super::corpus::{Pair, ParallelCorpus};
use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::positional::Positions;
use crate::rng::SeedStream;

/// One padded training batch. Ids are row-major `[B, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// `[bos] + source + [eos]`, padded.
    pub src_ids: Vec<usize>,
    /// `[bos] + target`, padded.
    pub tgt_in: Vec<usize>,
    /// `target + [eos]`, padded with [`PAD`], which the loss ignores.
    pub tgt_out: Vec<usize>,
    pub src_valid: Vec<bool>,
    pub tgt_valid: Vec<bool>,
    pub src_pos: Positions,
    pub tgt_pos: Positions,
}

impl Batch {
    pub fn from_pairs(pairs: &[Pair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let b = pairs.len();
        let src_len = pairs.iter().map(|(s, _)| s.len() + 2).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|(_, t)| t.len() + 1).max().unwrap_or(0);
        let mut batch = Self {
            size: b,
            src_len,
            tgt_len,
            src_ids: vec![PAD; b * src_len],
            tgt_in: vec![PAD; b * tgt_len],
            tgt_out: vec![PAD; b * tgt_len],
            src_valid: vec![false; b * src_len],
            tgt_valid: vec![false; b * tgt_len],
            src_pos: Positions::sequential(b, src_len),
            tgt_pos: Positions::sequential(b, tgt_len),
        };
        for (r, (s, t)) in pairs.iter().enumerate() {
            let src = std::iter::once(BOS).chain(s.iter().copied()).chain([EOS]);
            for (i, id) in src.enumerate() {
                batch.src_ids[r * src_len + i] = id;
                batch.src_valid[r * src_len + i] = true;
            }
            for i in 0..=t.len() {
                let at = r * tgt_len + i;
                batch.tgt_in[at] = if i == 0 { BOS } else { t[i - 1] };
                batch.tgt_out[at] = if i == t.len() { EOS } else { t[i] };
                batch.tgt_valid[at] = true;
            }
        }
        Ok(batch)
    }

    /// Number of non-pad target tokens.
    pub fn target_tokens(&self) -> usize {
        self.tgt_valid.iter().filter(|&&v| v).count()
    }
}

/// Splits `corpus` into padded batches, shuffled by `shuffle` when given.
/// Every pair must already fit `max_len`.
pub fn batchify(
    corpus: &ParallelCorpus,
    batch_size: usize,
    max_len: usize,
    shuffle: Option<SeedStream>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Some((s, t)) = corpus
        .pairs()
        .iter()
        .find(|(s, t)| s.len() + 2 > max_len || t.len() + 2 > max_len)
    {
        return Err(Error::ContextOverflow {
            len: s.len().max(t.len()) + 2,
            max: max_len,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(seed) = shuffle {
        order.shuffle(&mut seed.rng());
    }
    order
        .chunks(batch_size)
        .map(|idx| {
            let pairs: Vec<Pair> = idx.iter().map(|&i| corpus.pairs()[i].clone()).collect();
            Batch::from_pairs(&pairs)
        })
        .collect()
}
