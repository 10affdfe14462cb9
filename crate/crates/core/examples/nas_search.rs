//! Architecture search over the 192-config space against the synthetic
//! objective, next to random search at the same budget.

use forge::nas::{random_search_order, run_search, run_synthetic, synthetic_objective, SearchSettings, SearchSpace};

fn main() -> forge::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let space = SearchSpace::default();
    let settings = SearchSettings { n_trials: 40, seed, ..Default::default() };
    let report = run_search(&space, &settings, &run_synthetic, None, false)?;

    println!("{} configs, {} trials, seed {seed}", space.size(), settings.n_trials);
    for (r, best) in report.records.iter().zip(report.best_so_far()) {
        let p = &r.config.params;
        println!(
            "trial {:>2}  enc {}{}{}{}  dropout {:<4}  {:<4}  objective {:>5.1}  best {:>5.1}",
            r.config.trial_id,
            p.sinusoidal as u8,
            p.learned as u8,
            p.rotary as u8,
            p.alibi as u8,
            p.dropout_rate,
            p.activation.as_str(),
            r.result.objective.unwrap_or(f64::NAN),
            best.unwrap_or(f64::NAN)
        );
    }
    let best = report.best().expect("a successful trial");
    println!("\nbest: {:?}", best.config.params);

    let random_best = random_search_order(&space, 40, seed)
        .into_iter()
        .map(|i| synthetic_objective(&space.config(i)))
        .fold(f64::NEG_INFINITY, f64::max);
    println!("random search best at the same budget: {random_best}");
    Ok(())
}
