mod common;

use common::RiggedModel;
use forge::generate::{beam_decode, beam_search, greedy_decode, DecodeOptions, StepModel};
use forge::Result;
use proptest::prelude::*;

/// Tiny-vocabulary options: ids `0..vocab`, the last one is eos, bos lies outside.
fn small_opts(vocab: usize, max_len: usize) -> DecodeOptions {
    DecodeOptions { max_len, bos: vocab, eos: vocab - 1, banned: Vec::new() }
}

/// The same distribution at every step.
struct Fixed(Vec<f64>);

impl StepModel for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }
    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.0.clone(); prefixes.len()])
    }
}

/// Every complete output (eos-terminated, or `max_len` long without eos)
/// with its total log-probability.
fn enumerate(model: &impl StepModel, opts: &DecodeOptions) -> Vec<(f64, Vec<usize>)> {
    let mut done = Vec::new();
    let mut frontier = vec![(0.0, Vec::new())];
    for step in 0..opts.max_len {
        let mut next = Vec::new();
        for (lp, toks) in frontier {
            let prefix: Vec<usize> = std::iter::once(opts.bos).chain(toks.iter().copied()).collect();
            let dist = model.next_log_probs(&[prefix]).unwrap().remove(0);
            for t in 0..model.vocab_size() {
                let mut s: Vec<usize> = toks.clone();
                s.push(t);
                let score = lp + dist[t];
                if t == opts.eos || step + 1 == opts.max_len {
                    done.push((score, s));
                } else {
                    next.push((score, s));
                }
            }
        }
        frontier = next;
    }
    done
}

fn exhaustive_best(model: &impl StepModel, opts: &DecodeOptions) -> (f64, Vec<usize>) {
    enumerate(model, opts)
        .into_iter()
        .min_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)))
        .unwrap()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - z).collect()
}

#[test]
fn greedy_follows_rigged_argmax() {
    // argmax 0 then 1 then eos, independent of the prefix contents
    struct Steps;
    impl StepModel for Steps {
        fn vocab_size(&self) -> usize {
            3
        }
        fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let mut l = vec![-5.0; 3];
                    l[(p.len() - 1).min(2)] = 0.0;
                    l
                })
                .collect())
        }
    }
    assert_eq!(greedy_decode(&Steps, &small_opts(3, 10)).unwrap(), vec![0, 1]);
    assert!(greedy_decode(&Fixed(log_softmax(&[0.0, 0.0, 9.0])), &small_opts(3, 10)).unwrap().is_empty());
}

#[test]
fn width_one_beam_equals_greedy_on_rigged_models() {
    for seed in 0..100 {
        let vocab = 4 + (seed as usize % 5);
        let model = RiggedModel::new(vocab, seed);
        let opts = small_opts(vocab, 2 + seed as usize % 7);
        let g = greedy_decode(&model, &opts).unwrap();
        let b = beam_decode(&model, 1, 0.6, &opts).unwrap();
        assert_eq!(g, b, "seed {seed}");
    }
}

#[test]
fn wide_beam_matches_exhaustive_search() {
    for seed in 0..50 {
        let mut r = common::rng(seed);
        use rand::Rng;
        let fixed = Fixed(log_softmax(&(0..3).map(|_| r.gen_range(-2.0..2.0)).collect::<Vec<_>>()));
        let rigged = RiggedModel::new(3, seed);
        let opts = small_opts(3, 3);
        for width in [9, 12, 27] {
            for model in [&fixed as &dyn Probe, &rigged as &dyn Probe] {
                let (score, tokens) = model.exhaustive(&opts);
                let beam = model.beam(width, &opts);
                let best = beam.0;
                assert!((best - score).abs() < 1e-12, "seed {seed} width {width}: {best} vs {score}");
                assert_eq!(beam.1, tokens, "seed {seed} width {width}");
            }
        }
    }
}

#[test]
fn wide_beam_matches_exhaustive_search_up_to_four() {
    for seed in 0..30 {
        for vocab in 2..=4usize {
            for max_len in 1..=4usize {
                let model = RiggedModel::new(vocab, seed * 31 + vocab as u64);
                let opts = small_opts(vocab, max_len);
                let width = vocab.pow(max_len as u32 - 1);
                let beam = beam_search(&model, width, 0.0, &opts).unwrap();
                let h = beam.best().unwrap();
                let (score, tokens) = exhaustive_best(&model, &opts);
                assert!((h.log_prob - score).abs() < 1e-12);
                assert_eq!(h.tokens, tokens, "seed {seed} |V|={vocab} L={max_len}");
            }
        }
    }
}

trait Probe {
    fn exhaustive(&self, opts: &DecodeOptions) -> (f64, Vec<usize>);
    fn beam(&self, width: usize, opts: &DecodeOptions) -> (f64, Vec<usize>);
}

impl<M: StepModel> Probe for M {
    fn exhaustive(&self, opts: &DecodeOptions) -> (f64, Vec<usize>) {
        exhaustive_best(self, opts)
    }
    fn beam(&self, width: usize, opts: &DecodeOptions) -> (f64, Vec<usize>) {
        let b = beam_search(self, width, 0.0, opts).unwrap();
        let h = b.best().unwrap();
        (h.log_prob, h.tokens.clone())
    }
}

/// Seeds where a wider beam found a worse best score than a narrower one.
fn width_monotonicity_violations(alpha: f64) -> Vec<(u64, usize, f64, f64)> {
    let mut bad = Vec::new();
    for seed in 0..200 {
        let model = RiggedModel::new(6, seed);
        let opts = small_opts(6, 6);
        let mut prev: Option<(usize, f64)> = None;
        for width in [1, 2, 4, 8] {
            let s = beam_search(&model, width, alpha, &opts).unwrap().best().unwrap().normalized(alpha);
            if let Some((w, p)) = prev {
                if s < p - 1e-12 {
                    bad.push((seed, w, p, s));
                }
            }
            prev = Some((width, s));
        }
    }
    bad
}

#[test]
fn width_monotonicity_fails_rarely() {
    // Beam pruning is not monotone in width: on seed 27 the width-2 beam
    // drops the greedy prefix at step 2 and ends on a worse sequence. Such
    // cases stay rare on these rigged models.
    for alpha in [0.0, 0.6] {
        let bad = width_monotonicity_violations(alpha);
        eprintln!("alpha {alpha}: {} of 600 width comparisons got worse", bad.len());
        assert!(bad.len() <= 12, "alpha {alpha}: {bad:?}");
    }
    let bad = width_monotonicity_violations(0.0);
    let (seed, width, narrow, wide) = bad[0];
    assert_eq!((seed, width), (27, 1));
    assert!(wide < narrow);
    let model = RiggedModel::new(6, 27);
    let opts = small_opts(6, 6);
    assert_ne!(greedy_decode(&model, &opts).unwrap(), beam_decode(&model, 2, 0.0, &opts).unwrap());
}

proptest! {
    #[test]
    fn outputs_respect_length_and_reserved_ids(seed in 0u64..10_000, width in 1usize..6, max_len in 1usize..8) {
        let model = RiggedModel::new(7, seed);
        let opts = DecodeOptions::new(max_len);
        for out in [greedy_decode(&model, &opts).unwrap(), beam_decode(&model, width, 0.6, &opts).unwrap()] {
            prop_assert!(out.len() <= max_len);
            prop_assert!(out.iter().all(|&t| !opts.banned.contains(&t) && t != opts.eos));
        }
        let beam = beam_search(&model, width, 0.6, &opts).unwrap();
        let scores: Vec<f64> = beam.hypotheses.iter().map(|h| h.normalized(0.6)).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(beam_decode(&model, width, 0.6, &opts).unwrap(), beam_decode(&model, width, 0.6, &opts).unwrap());
    }
}
