use forge::bleu::{bleu_corpus, bleu_lines, BleuStats, Smoothing};
use proptest::prelude::*;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| words(l)).collect()
}

/// Counts n-grams by scanning windows pairwise, no hashing.
fn brute_force_bleu<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> f64 {
    let (mut c, mut r) = (0usize, 0usize);
    let mut log_sum = 0.0;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hw: Vec<&[T]> = if h.len() >= n { h.windows(n).collect() } else { Vec::new() };
            let rw: Vec<&[T]> = if rf.len() >= n { rf.windows(n).collect() } else { Vec::new() };
            totals[n - 1] += hw.len();
            for (i, g) in hw.iter().enumerate() {
                if hw[..i].contains(g) {
                    continue;
                }
                let in_h = hw.iter().filter(|x| *x == g).count();
                let in_r = rw.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_h.min(in_r);
            }
        }
    }
    for n in 0..4 {
        if matches[n] == 0 {
            return 0.0;
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_sum / 4.0).exp()
}

#[test]
fn identical_corpora_score_100() {
    let h = corpus(&["a b c d e", "x y z w", "one two three four five six"]);
    assert!((bleu_corpus(&h, &h, 4, Smoothing::None).unwrap() - 100.0).abs() < 1e-12);
}

#[test]
fn clipped_unigram_precision_fixture() {
    let h = corpus(&["the the the the the the the"]);
    let r = corpus(&["the cat is on the mat"]);
    let stats = BleuStats::collect(&h, &r, 4).unwrap();
    assert_eq!((stats.matches[0], stats.totals[0]), (2, 7));
    assert!((stats.precision(1).unwrap() - 2.0 / 7.0).abs() < 1e-15);
}

#[test]
fn disjoint_and_zero_four_gram_corpora_score_zero() {
    let h = corpus(&["a b c d"]);
    assert_eq!(bleu_corpus(&h, &corpus(&["e f g h"]), 4, Smoothing::None).unwrap(), 0.0);
    assert_eq!(bleu_corpus(&h, &corpus(&["a b c x d"]), 4, Smoothing::None).unwrap(), 0.0);
    assert!(bleu_corpus(&h, &corpus(&["a b c x d"]), 4, Smoothing::AddOneOnZero).unwrap() > 0.0);
}

#[test]
fn three_sentence_corpus_by_hand_and_brute_force() {
    let h = corpus(&["the cat sat on the mat", "a dog runs", "hello world again today now"]);
    let r = corpus(&["the cat is on the mat", "a dog runs fast", "hello world again today"]);
    // matches/totals: 12/14, 8/11, 4/8, 1/5; c = r = 14 so BP = 1
    let by_hand = 100.0 * ((12.0 / 14.0) * (8.0 / 11.0) * (4.0 / 8.0) * (1.0f64 / 5.0)).powf(0.25);
    let got = bleu_corpus(&h, &r, 4, Smoothing::None).unwrap();
    assert!((got - by_hand).abs() < 1e-9, "{got} vs {by_hand}");
    assert!((got - brute_force_bleu(&h, &r)).abs() < 1e-9);
    assert!((got - 49.967500795311324).abs() < 1e-9);
}

#[test]
fn brevity_penalty_applies_to_short_output() {
    let h = corpus(&["a b c d e"]);
    let r = corpus(&["a b c d e f g h"]);
    let want = 100.0 * (1.0f64 - 8.0 / 5.0).exp();
    assert!((bleu_corpus(&h, &r, 4, Smoothing::None).unwrap() - want).abs() < 1e-9);
}

#[test]
fn errors_on_empty_or_misaligned_input() {
    assert!(bleu_lines(&[], &[], Smoothing::None).is_err());
    assert!(bleu_lines(&["a".into()], &["a".into(), "b".into()], Smoothing::None).is_err());
}

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, 0..9)
}

proptest! {
    #[test]
    fn matches_brute_force_counter(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assume!(h.iter().any(|s| !s.is_empty()));
        let got = bleu_corpus(&h, &r, 4, Smoothing::None).unwrap();
        prop_assert!((got - brute_force_bleu(&h, &r)).abs() < 1e-9);
    }

    #[test]
    fn bounded_and_reorder_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..6),
                                     smooth in any::<bool>(), rot in 0usize..6) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assume!(h.iter().any(|s| !s.is_empty()));
        let sm = if smooth { Smoothing::AddOneOnZero } else { Smoothing::None };
        let s = bleu_corpus(&h, &r, 4, sm).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        let k = rot % h.len();
        let (mut h2, mut r2) = (h.clone(), r.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        h2.reverse();
        r2.reverse();
        prop_assert_eq!(s, bleu_corpus(&h2, &r2, 4, sm).unwrap());
    }

    #[test]
    fn self_bleu_is_100_when_four_grams_exist(h in prop::collection::vec(prop::collection::vec(0u8..5, 4..9), 1..5)) {
        let s = bleu_corpus(&h, &h, 4, Smoothing::None).unwrap();
        prop_assert!((s - 100.0).abs() < 1e-9);
    }
}
