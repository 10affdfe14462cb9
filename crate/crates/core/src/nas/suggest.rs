use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::space::{SearchSpace, N_PARAMS};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub const DEFAULT_WARMUP: usize = 8;
pub const DEFAULT_KAPPA: f64 = 1.0;
const BACKFIT_SWEEPS: usize = 25;

/// A visited configuration; `objective` is `None` for failed trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub objective: Option<f64>,
}

fn hamming(a: &[usize; N_PARAMS], b: &[usize; N_PARAMS]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Additive per-parameter effects fitted by backfitting, with visit counts
/// for the exploration bonus. Observed configs predict their observed value.
#[derive(Clone, Debug)]
pub struct Surrogate {
    space: SearchSpace,
    mean: f64,
    spread: f64,
    effects: Vec<Vec<f64>>,
    counts: Vec<Vec<usize>>,
    observed: Vec<Option<f64>>,
}

impl Surrogate {
    /// `visited` configs (observed or pending) count toward the bonus.
    pub fn fit(space: &SearchSpace, history: &[Observation], pending: &[usize]) -> Self {
        let cards = space.cardinalities();
        let mut observed = vec![None; space.size()];
        let obs: Vec<([usize; N_PARAMS], f64)> = history
            .iter()
            .filter_map(|o| o.objective.map(|y| (space.levels(o.index), y)))
            .collect();
        for o in history {
            if let Some(y) = o.objective {
                observed[o.index] = Some(y);
            }
        }
        let mut counts: Vec<Vec<usize>> = cards.iter().map(|&c| vec![0; c]).collect();
        for idx in history.iter().map(|o| o.index).chain(pending.iter().copied()) {
            for (p, &l) in space.levels(idx).iter().enumerate() {
                counts[p][l] += 1;
            }
        }
        let n = obs.len().max(1) as f64;
        let mean = obs.iter().map(|(_, y)| y).sum::<f64>() / n;
        let var = obs.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>() / n;
        let spread = if var > 0.0 { var.sqrt() } else { 1.0 };

        let mut effects: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
        for _ in 0..BACKFIT_SWEEPS {
            for p in 0..N_PARAMS {
                let mut sum = vec![0.0; cards[p]];
                let mut cnt = vec![0usize; cards[p]];
                for (x, y) in &obs {
                    let others: f64 = (0..N_PARAMS).filter(|&q| q != p).map(|q| effects[q][x[q]]).sum();
                    sum[x[p]] += y - mean - others;
                    cnt[x[p]] += 1;
                }
                for l in 0..cards[p] {
                    effects[p][l] = if cnt[l] > 0 { sum[l] / cnt[l] as f64 } else { 0.0 };
                }
            }
        }
        Self {
            space: space.clone(),
            mean,
            spread,
            effects,
            counts,
            observed,
        }
    }

    pub fn predict(&self, index: usize) -> f64 {
        if let Some(y) = self.observed[index] {
            return y;
        }
        let l = self.space.levels(index);
        self.mean + (0..N_PARAMS).map(|p| self.effects[p][l[p]]).sum::<f64>()
    }

    /// `kappa · spread · Σ 1/√(1 + visits of each of the config's levels)`.
    pub fn bonus(&self, index: usize, kappa: f64) -> f64 {
        let l = self.space.levels(index);
        let inv: f64 = (0..N_PARAMS)
            .map(|p| 1.0 / (1.0 + self.counts[p][l[p]] as f64).sqrt())
            .sum();
        kappa * self.spread * inv
    }

    /// All configs by predicted objective, best first; ties by index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.space.size()).collect();
        idx.sort_by(|&a, &b| self.predict(b).total_cmp(&self.predict(a)).then(a.cmp(&b)));
        idx
    }
}

/// Warmup draws followed by surrogate-guided picks.
#[derive(Clone, Debug)]
pub struct Suggester {
    pub space: SearchSpace,
    pub seed: u64,
    pub warmup: usize,
    pub kappa: f64,
}

impl Suggester {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        Self {
            space,
            seed,
            warmup: DEFAULT_WARMUP,
            kappa: DEFAULT_KAPPA,
        }
    }

    /// Space-filling warmup set: greedy maximin Hamming distance over a
    /// seeded permutation. Depends only on the space and seed.
    pub fn warmup_points(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.space.size()).collect();
        perm.shuffle(&mut SeedStream::new(self.seed).named("warmup").rng());
        let levels: Vec<_> = perm.iter().map(|&i| self.space.levels(i)).collect();
        let mut chosen = vec![0usize];
        while chosen.len() < self.warmup.min(perm.len()) {
            let score = |c: usize| chosen.iter().map(|&k| hamming(&levels[c], &levels[k])).min().unwrap_or(0);
            let next = (0..perm.len())
                .filter(|c| !chosen.contains(c))
                .fold(None::<(usize, usize)>, |best, c| {
                    let s = score(c);
                    match best {
                        Some((_, bs)) if bs >= s => best,
                        _ => Some((c, s)),
                    }
                })
                .map(|(c, _)| c)
                .expect("unvisited candidate");
            chosen.push(next);
        }
        chosen.into_iter().map(|c| perm[c]).collect()
    }

    /// Suggestion for trial `trial_index` given completed `history` and
    /// configs already handed out but not yet finished.
    pub fn suggest(&self, trial_index: usize, history: &[Observation], pending: &[usize]) -> Result<usize> {
        let visited: HashSet<usize> = history.iter().map(|o| o.index).chain(pending.iter().copied()).collect();
        if visited.len() >= self.space.size() {
            return Err(Error::SearchSpaceExhausted);
        }
        if trial_index < self.warmup {
            if let Some(&p) = self.warmup_points().get(trial_index) {
                if !visited.contains(&p) {
                    return Ok(p);
                }
            }
        }
        let surrogate = Surrogate::fit(&self.space, history, pending);
        let mut order: Vec<usize> = (0..self.space.size()).filter(|i| !visited.contains(i)).collect();
        order.shuffle(&mut SeedStream::new(self.seed).named("suggest").child(trial_index as u64).rng());
        let acquisition = |i: usize| surrogate.predict(i) + surrogate.bonus(i, self.kappa);
        let mut best = order[0];
        let mut best_score = acquisition(best);
        for &i in &order[1..] {
            let s = acquisition(i);
            if s > best_score {
                (best, best_score) = (i, s);
            }
        }
        Ok(best)
    }
}

/// Pure random search: the first `budget` entries of a seeded permutation.
pub fn random_search_order(space: &SearchSpace, budget: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..space.size()).collect();
    perm.shuffle(&mut SeedStream::new(seed).named("random-search").rng());
    perm.truncate(budget);
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_distinct_and_spread() {
        let s = Suggester::new(SearchSpace::default(), 3);
        let w = s.warmup_points();
        assert_eq!(w.len(), DEFAULT_WARMUP);
        let set: HashSet<_> = w.iter().collect();
        assert_eq!(set.len(), w.len());
        let lv: Vec<_> = w.iter().map(|&i| s.space.levels(i)).collect();
        assert!(hamming(&lv[0], &lv[1]) == N_PARAMS);
    }

    #[test]
    fn empty_history_gives_first_warmup_point() {
        let s = Suggester::new(SearchSpace::default(), 9);
        let first = s.suggest(0, &[], &[]).unwrap();
        assert_eq!(first, s.warmup_points()[0]);
        assert!(first < s.space.size());
    }

    #[test]
    fn exhausted_space_is_an_error() {
        let space = SearchSpace {
            dropout_rates: vec![0.0],
            activations: vec![crate::autograd::Activation::Relu],
        };
        let s = Suggester::new(space, 0);
        let hist: Vec<_> = (0..16).map(|i| Observation { index: i, objective: Some(i as f64) }).collect();
        let err = s.suggest(16, &hist, &[]).unwrap_err();
        assert!(err.to_string().contains("search space exhausted"));
    }

    #[test]
    fn additive_truth_is_recovered() {
        let space = SearchSpace::default();
        let f = |i: usize| {
            let l = space.levels(i);
            3.0 * l[0] as f64 - 2.0 * l[4] as f64 + l[5] as f64
        };
        let hist: Vec<_> = (0..space.size())
            .step_by(5)
            .map(|i| Observation { index: i, objective: Some(f(i)) })
            .collect();
        let s = Surrogate::fit(&space, &hist, &[]);
        for i in 0..space.size() {
            assert!((s.predict(i) - f(i)).abs() < 1e-6, "config {i}");
        }
    }
}
