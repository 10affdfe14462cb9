use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub type Pair = (Vec<usize>, Vec<usize>);

/// Aligned (source, target) token-id sequences, without bos/eos.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<Pair>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Seeded shuffle, then the last `n_valid` pairs become the second part.
    pub fn split(&self, n_valid: usize, seed: SeedStream) -> (Self, Self) {
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut seed.rng());
        let cut = pairs.len().saturating_sub(n_valid);
        let valid = pairs.split_off(cut);
        (Self::new(pairs), Self::new(valid))
    }

    /// Tokenizes aligned lines with the given vocabularies.
    pub fn from_lines(src: &[String], tgt: &[String], src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::InvalidArgument(format!(
                "source has {} lines but target has {}",
                src.len(),
                tgt.len()
            )));
        }
        Ok(Self::new(
            src.iter()
                .zip(tgt)
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect(),
        ))
    }
}

/// Reads a UTF-8 file as one sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Removes pairs where either side, with bos and eos added, is longer than
/// `max_len`. Returns the kept corpus and the number dropped.
pub fn filter_by_context(corpus: &ParallelCorpus, max_len: usize) -> (ParallelCorpus, usize) {
    let fits = |s: &Vec<usize>| s.len() + 2 <= max_len;
    let kept: Vec<Pair> = corpus
        .pairs
        .iter()
        .filter(|(s, t)| fits(s) && fits(t))
        .cloned()
        .collect();
    let dropped = corpus.len() - kept.len();
    (ParallelCorpus::new(kept), dropped)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTask {
    Copy,
    Reverse,
    /// Each id moves one step forward within the non-reserved range.
    ShiftCipher,
}

impl ToyTask {
    pub fn apply(&self, src: &[usize], vocab_size: usize) -> Vec<usize> {
        let lo = RESERVED.len();
        match self {
            ToyTask::Copy => src.to_vec(),
            ToyTask::Reverse => src.iter().rev().copied().collect(),
            ToyTask::ShiftCipher => src.iter().map(|&x| lo + (x - lo + 1) % (vocab_size - lo)).collect(),
        }
    }
}

/// Random sources over the non-reserved ids with lengths drawn from
/// `min_len..=max_len`; targets are the task's function of the source.
pub fn make_toy_corpus(
    task: ToyTask,
    vocab_size: usize,
    (min_len, max_len): (usize, usize),
    n_pairs: usize,
    seed: u64,
) -> Result<ParallelCorpus> {
    if vocab_size < 5 {
        return Err(Error::InvalidArgument(format!("toy vocab_size must be at least 5, got {vocab_size}")));
    }
    if min_len == 0 || min_len > max_len {
        return Err(Error::InvalidArgument(format!("invalid length range {min_len}..={max_len}")));
    }
    let mut rng = SeedStream::new(seed).named("toy-corpus").rng();
    let pairs = (0..n_pairs)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(RESERVED.len()..vocab_size)).collect();
            let tgt = task.apply(&src, vocab_size);
            (src, tgt)
        })
        .collect();
    Ok(ParallelCorpus::new(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> Vec<usize> {
        vec![4; n]
    }

    #[test]
    fn short_pairs_survive() {
        let c = ParallelCorpus::new(vec![(seq(3), seq(4)), (seq(1), seq(1))]);
        let (kept, dropped) = filter_by_context(&c, 10);
        assert_eq!(dropped, 0);
        assert_eq!(kept, c);
    }

    #[test]
    fn boundary_is_inclusive() {
        let c = ParallelCorpus::new(vec![(seq(8), seq(2)), (seq(2), seq(9))]);
        let (kept, dropped) = filter_by_context(&c, 10);
        assert_eq!(dropped, 1);
        assert_eq!(kept.pairs(), &[(seq(8), seq(2))]);
    }

    #[test]
    fn toy_tasks() {
        let v = 20;
        assert_eq!(ToyTask::Reverse.apply(&[4, 5, 6], v), vec![6, 5, 4]);
        assert_eq!(ToyTask::ShiftCipher.apply(&[4, 18, 19], v), vec![5, 19, 4]);
        let c = make_toy_corpus(ToyTask::Copy, v, (2, 5), 50, 1).unwrap();
        assert!(c.pairs().iter().all(|(s, t)| s == t && (2..=5).contains(&s.len())));
        assert_eq!(c, make_toy_corpus(ToyTask::Copy, v, (2, 5), 50, 1).unwrap());
        assert!(make_toy_corpus(ToyTask::Copy, 4, (2, 5), 5, 1).is_err());
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let c = make_toy_corpus(ToyTask::Copy, 20, (1, 3), 30, 2).unwrap();
        let (a, b) = c.split(5, SeedStream::new(3));
        assert_eq!((a.len(), b.len()), (25, 5));
        assert_eq!(c.split(5, SeedStream::new(3)), (a, b));
    }
}
