//! Corpus-level BLEU on a 0–100 scale, one reference per hypothesis.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Any zero precision makes the score 0.
    #[default]
    None,
    /// A zero `p_n` becomes `1 / (total_n + 1)`.
    AddOneOnZero,
}

/// Summed n-gram statistics of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order, index 0 is unigrams.
    pub matches: Vec<usize>,
    /// Hypothesis n-gram counts per order.
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn collect<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<Self> {
        if hypotheses.len() != references.len() {
            return Err(Error::InvalidArgument(format!(
                "{} hypotheses but {} references",
                hypotheses.len(),
                references.len()
            )));
        }
        if hypotheses.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if max_n == 0 {
            return Err(Error::InvalidArgument("max_n must be at least 1".into()));
        }
        let mut s = Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        };
        for (h, r) in hypotheses.iter().zip(references) {
            s.hyp_len += h.len();
            s.ref_len += r.len();
            for n in 1..=max_n {
                let ref_counts = ngram_counts(r, n);
                for (gram, c) in ngram_counts(h, n) {
                    s.matches[n - 1] += c.min(ref_counts.get(gram).copied().unwrap_or(0));
                    s.totals[n - 1] += c;
                }
            }
        }
        Ok(s)
    }

    /// Modified precision of order `n` (1-based); `None` when there are no n-grams.
    pub fn precision(&self, n: usize) -> Option<f64> {
        let t = self.totals[n - 1];
        (t > 0).then(|| self.matches[n - 1] as f64 / t as f64)
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0)
    }

    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            let p = match (m, smoothing) {
                (0, Smoothing::None) => return 0.0,
                (0, Smoothing::AddOneOnZero) => 1.0 / (t as f64 + 1.0),
                _ => m as f64 / t as f64,
            };
            log_sum += p.ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / self.matches.len() as f64).exp()
    }
}

pub fn bleu_corpus<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64> {
    Ok(BleuStats::collect(hypotheses, references, max_n)?.score(smoothing))
}

/// Whitespace-tokenized convenience wrapper with `max_n = 4`.
pub fn bleu_lines(hypotheses: &[String], references: &[String], smoothing: Smoothing) -> Result<f64> {
    let split = |ls: &[String]| -> Vec<Vec<String>> {
        ls.iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    };
    bleu_corpus(&split(hypotheses), &split(references), 4, smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn clipped_unigram_precision() {
        let h = vec![toks("the the the the the the the")];
        let r = vec![toks("the cat is on the mat")];
        let s = BleuStats::collect(&h, &r, 4).unwrap();
        assert_eq!((s.matches[0], s.totals[0]), (2, 7));
        assert!((s.precision(1).unwrap() - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn identical_is_100() {
        let h = vec![toks("a b c d e"), toks("x y z w")];
        assert!((bleu_corpus(&h, &h, 4, Smoothing::None).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_four_gram_overlap() {
        let h = vec![toks("a b c x d e f")];
        let r = vec![toks("a b c y d e f")];
        assert_eq!(bleu_corpus(&h, &r, 4, Smoothing::None).unwrap(), 0.0);
        assert!(bleu_corpus(&h, &r, 4, Smoothing::AddOneOnZero).unwrap() > 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let e: Vec<Vec<&str>> = vec![];
        assert!(bleu_corpus(&e, &e, 4, Smoothing::None).is_err());
    }
}
