//! Greedy and beam-search decoding over any next-token scorer.

use std::cmp::Ordering;

use crate::autograd::Tape;
use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{Seq2SeqModel, SourceInputs};
use crate::nn::Ctx;
use crate::positional::Positions;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LENGTH_PENALTY: f64 = 0.6;

/// Next-token log-probabilities given target prefixes.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    /// One distribution per prefix. Prefixes start with the bos id and share a length.
    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    /// Maximum number of generated tokens, eos included.
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
    /// Ids never emitted.
    pub banned: Vec<usize>,
}

impl DecodeOptions {
    pub fn new(max_len: usize) -> Self {
        Self {
            max_len,
            bos: BOS,
            eos: EOS,
            banned: vec![PAD, BOS],
        }
    }

    fn allowed(&self, vocab: usize) -> Vec<usize> {
        (0..vocab).filter(|t| !self.banned.contains(t)).collect()
    }
}

fn with_bos(bos: usize, tokens: &[usize]) -> Vec<usize> {
    std::iter::once(bos).chain(tokens.iter().copied()).collect()
}

/// Appends the argmax token until eos or `max_len`; ties go to the lowest id.
pub fn greedy_decode(model: &impl StepModel, opts: &DecodeOptions) -> Result<Vec<usize>> {
    let allowed = opts.allowed(model.vocab_size());
    let mut out = Vec::new();
    for _ in 0..opts.max_len {
        let lp = model.next_log_probs(&[with_bos(opts.bos, &out)])?.remove(0);
        let mut best = None::<usize>;
        for &t in &allowed {
            if best.map_or(true, |b| lp[t] > lp[b]) {
                best = Some(t);
            }
        }
        match best {
            Some(t) if t != opts.eos => out.push(t),
            _ => break,
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, ending in eos when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// `log_prob / len^alpha`, with eos counted in the length.
    pub fn normalized(&self, alpha: f64) -> f64 {
        self.log_prob / (self.tokens.len().max(1) as f64).powf(alpha)
    }

    /// Tokens without the terminal eos.
    pub fn output(&self, eos: usize) -> Vec<usize> {
        let mut t = self.tokens.clone();
        if t.last() == Some(&eos) {
            t.pop();
        }
        t
    }
}

/// Higher score first, then lexicographically smaller tokens.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam state after a search: the banked candidates, best first.
#[derive(Clone, Debug)]
pub struct Beam {
    pub hypotheses: Vec<Hypothesis>,
    pub width: usize,
    pub length_penalty: f64,
}

impl Beam {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

/// Each step expands every live hypothesis over the vocabulary and keeps the
/// top `width` expansions by cumulative log-probability. Expansions ending
/// in eos, and live ones at `max_len`, are banked; the answer maximizes the
/// length-normalized score.
pub fn beam_search(model: &impl StepModel, width: usize, length_penalty: f64, opts: &DecodeOptions) -> Result<Beam> {
    if width < 1 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let allowed = opts.allowed(model.vocab_size());
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut banked = Vec::new();
    for step in 0..opts.max_len {
        let prefixes: Vec<Vec<usize>> = live.iter().map(|h| with_bos(opts.bos, &h.tokens)).collect();
        let dists = model.next_log_probs(&prefixes)?;
        let mut expansions: Vec<(f64, Vec<usize>)> = Vec::with_capacity(live.len() * allowed.len());
        for (h, lp) in live.iter().zip(&dists) {
            for &t in &allowed {
                let score = h.log_prob + lp[t];
                // zero-probability (or NaN) continuations never enter the beam
                if !score.is_finite() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                expansions.push((score, tokens));
            }
        }
        expansions.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        expansions.truncate(width);
        let last_step = step + 1 == opts.max_len;
        live.clear();
        for (log_prob, tokens) in expansions {
            let finished = tokens.last() == Some(&opts.eos);
            let h = Hypothesis { tokens, log_prob, finished };
            if finished || last_step {
                banked.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    banked.sort_by(|a, b| rank((a.normalized(length_penalty), &a.tokens), (b.normalized(length_penalty), &b.tokens)));
    Ok(Beam {
        hypotheses: banked,
        width,
        length_penalty,
    })
}

/// Best beam output without the terminal eos; empty when nothing was banked.
pub fn beam_decode(model: &impl StepModel, width: usize, length_penalty: f64, opts: &DecodeOptions) -> Result<Vec<usize>> {
    let beam = beam_search(model, width, length_penalty, opts)?;
    Ok(beam.best().map(|h| h.output(opts.eos)).unwrap_or_default())
}

/// Scores target prefixes for one source sentence; the source is encoded once.
pub struct ModelScorer<'m, S: Scalar> {
    model: &'m Seq2SeqModel<S>,
    memory: Tensor<S>,
    src_ids: Vec<usize>,
}

impl<'m, S: Scalar> ModelScorer<'m, S> {
    /// `src` holds source tokens without bos/eos.
    pub fn new(model: &'m Seq2SeqModel<S>, src: &[usize]) -> Result<Self> {
        let src_ids = with_bos(BOS, src).into_iter().chain([EOS]).collect::<Vec<_>>();
        let len = src_ids.len();
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, model.params());
        let memory = model
            .encode(
                &ctx,
                &SourceInputs {
                    ids: &src_ids,
                    batch: 1,
                    positions: &Positions::sequential(1, len),
                    valid: &vec![true; len],
                },
            )?
            .to_tensor();
        Ok(Self { model, memory, src_ids })
    }
}

impl<S: Scalar> StepModel for ModelScorer<'_, S> {
    fn vocab_size(&self) -> usize {
        self.model.config().tgt_vocab
    }

    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let k = prefixes.len();
        let t = prefixes.first().map_or(0, Vec::len);
        if k == 0 || prefixes.iter().any(|p| p.len() != t) {
            return Err(Error::InvalidArgument("prefixes must be non-empty and share a length".into()));
        }
        let (ts, d) = (self.src_ids.len(), self.model.config().d_model);
        let mem_data: Vec<S> = (0..k).flat_map(|_| self.memory.data().iter().copied()).collect();
        let src_ids: Vec<usize> = (0..k).flat_map(|_| self.src_ids.iter().copied()).collect();
        let src_pos = Positions::sequential(k, ts);
        let src_valid = vec![true; k * ts];
        let tgt: Vec<usize> = prefixes.iter().flatten().copied().collect();

        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, self.model.params());
        let memory = ctx.constant(Tensor::new(&[k, ts, d], mem_data)?);
        let src = SourceInputs {
            ids: &src_ids,
            batch: k,
            positions: &src_pos,
            valid: &src_valid,
        };
        let logits = self
            .model
            .decode(&ctx, &tgt, &Positions::sequential(k, t), &vec![true; k * t], memory, &src)?;
        let logits = logits.value();
        let v = self.vocab_size();
        Ok((0..k)
            .map(|b| {
                let row = &logits.data()[(b * t + t - 1) * v..(b * t + t) * v];
                let max = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x.f64() - max).exp()).sum::<f64>().ln();
                row.iter().map(|x| x.f64() - lse).collect()
            })
            .collect())
    }
}

/// Greedy (`width == 1`) or beam translation of one source sentence.
pub fn translate<S: Scalar>(
    model: &Seq2SeqModel<S>,
    src: &[usize],
    width: usize,
    length_penalty: f64,
    max_len: usize,
) -> Result<Vec<usize>> {
    let scorer = ModelScorer::new(model, src)?;
    let opts = DecodeOptions::new(max_len.min(model.config().max_len));
    if width == 1 {
        greedy_decode(&scorer, &opts)
    } else {
        beam_decode(&scorer, width, length_penalty, &opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed per-step distributions, independent of the prefix contents.
    struct Scripted(Vec<Vec<f64>>);

    impl StepModel for Scripted {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }
        fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| self.0[(p.len() - 1).min(self.0.len() - 1)].clone())
                .collect())
        }
    }

    fn peaked(v: usize, at: usize) -> Vec<f64> {
        (0..v).map(|i| if i == at { -0.1 } else { -3.0 }).collect()
    }

    #[test]
    fn eos_first_gives_empty_output() {
        let m = Scripted(vec![peaked(8, EOS)]);
        assert!(greedy_decode(&m, &DecodeOptions::new(10)).unwrap().is_empty());
        assert!(beam_decode(&m, 3, 0.6, &DecodeOptions::new(10)).unwrap().is_empty());
    }

    #[test]
    fn follows_scripted_argmax() {
        let m = Scripted(vec![peaked(8, 3), peaked(8, 5), peaked(8, EOS)]);
        assert_eq!(greedy_decode(&m, &DecodeOptions::new(10)).unwrap(), vec![3, 5]);
    }

    #[test]
    fn respects_max_len_and_ties() {
        let m = Scripted(vec![vec![-1.0; 8]]);
        // all tied: lowest allowed id wins, and PAD/BOS are banned
        assert_eq!(greedy_decode(&m, &DecodeOptions::new(3)).unwrap(), Vec::<usize>::new());
        let m = Scripted(vec![vec![-1.0, -1.0, -2.0, -1.0]]);
        assert_eq!(greedy_decode(&m, &DecodeOptions::new(3)).unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn impossible_tokens_stay_out_of_the_beam() {
        let mut lp = vec![f64::NEG_INFINITY; 6];
        lp[4] = 0.0;
        let m = Scripted(vec![lp.clone(), {
            let mut l = lp;
            l.swap(4, EOS);
            l
        }]);
        let beam = beam_search(&m, 4, 0.0, &DecodeOptions::new(5)).unwrap();
        assert_eq!(beam.hypotheses.len(), 1);
        assert_eq!(beam.best().unwrap().tokens, vec![4, EOS]);
    }

    #[test]
    fn zero_width_rejected() {
        let m = Scripted(vec![peaked(8, 3)]);
        assert!(beam_search(&m, 0, 0.0, &DecodeOptions::new(3)).is_err());
    }
}
