use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::space::SearchSpace;
use super::suggest::{Observation, Suggester, DEFAULT_KAPPA, DEFAULT_WARMUP};
use super::trial::{TrialConfig, TrialResult, TrialStatus};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::train::RunConfig;

pub const REPORT_FILE: &str = "report.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.json";
pub const JOURNAL_FILE: &str = "journal.jsonl";

/// One journal line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub result: TrialResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub n_trials: usize,
    /// Trials run concurrently per round.
    pub parallelism: usize,
    pub seed: u64,
    pub warmup: usize,
    pub kappa: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            n_trials: 40,
            parallelism: 1,
            seed: 0,
            warmup: DEFAULT_WARMUP,
            kappa: DEFAULT_KAPPA,
        }
    }
}

pub fn trial_seed(search_seed: u64, trial_id: usize) -> u64 {
    SeedStream::new(search_seed).named("trial").child(trial_id as u64).derive_seed()
}

/// Reads a journal, ignoring a truncated final line. A missing file is empty.
pub fn read_journal(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::file(path, e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<TrialRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::InvalidArgument(format!(
                    "{}: corrupt journal line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    for (i, r) in records.iter().enumerate() {
        if r.config.trial_id != i || r.result.trial_id != i {
            return Err(Error::InvalidArgument(format!(
                "{}: journal line {} holds trial {}",
                path.display(),
                i + 1,
                r.config.trial_id
            )));
        }
    }
    Ok(records)
}

fn write_journal(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn append_journal(path: &Path, record: &TrialRecord) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::file(path, e))?;
    let line = serde_json::to_string(record)? + "\n";
    f.write_all(line.as_bytes()).map_err(|e| Error::file(path, e))?;
    f.sync_data().map_err(|e| Error::file(path, e))
}

pub type Objective<'a> = dyn Fn(&TrialConfig) -> TrialResult + Sync + 'a;

/// Runs trials in rounds of `parallelism`. Trial `i` is suggested from the
/// results of all earlier rounds, with the configs already handed out in
/// its own round marked pending, so the outcome does not depend on thread
/// timing and a resumed journal replays the same decisions.
pub fn run_search(
    space: &SearchSpace,
    settings: &SearchSettings,
    objective: &Objective<'_>,
    journal: Option<&Path>,
    resume: bool,
) -> Result<SearchReport> {
    space.validate()?;
    if settings.parallelism == 0 {
        return Err(Error::InvalidArgument("parallelism must be at least 1".into()));
    }
    let n_trials = settings.n_trials.min(space.size());
    let mut records = match (journal, resume) {
        (Some(path), true) => {
            let mut r = read_journal(path)?;
            r.truncate(n_trials);
            write_journal(path, &r)?;
            r
        }
        (Some(path), false) => {
            write_journal(path, &[])?;
            Vec::new()
        }
        (None, _) => Vec::new(),
    };
    let suggester = Suggester {
        space: space.clone(),
        seed: settings.seed,
        warmup: settings.warmup,
        kappa: settings.kappa,
    };
    let index_of = |r: &TrialRecord| {
        space
            .index_of(&r.config.params)
            .ok_or_else(|| Error::InvalidArgument(format!("trial {} lies outside the search space", r.config.trial_id)))
    };
    while records.len() < n_trials {
        let p = settings.parallelism;
        let round_start = records.len() / p * p;
        let round_end = (round_start + p).min(n_trials);
        let history = records[..round_start]
            .iter()
            .map(|r| {
                Ok(Observation {
                    index: index_of(r)?,
                    objective: r.result.objective,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pending = records[round_start..].iter().map(index_of).collect::<Result<Vec<_>>>()?;
        let mut configs = Vec::new();
        for trial_id in records.len()..round_end {
            let idx = suggester.suggest(trial_id, &history, &pending)?;
            pending.push(idx);
            configs.push(TrialConfig {
                trial_id,
                seed: trial_seed(settings.seed, trial_id),
                params: space.config(idx),
            });
        }
        let results: Vec<TrialResult> = if configs.len() == 1 {
            vec![objective(&configs[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || objective(c))).collect();
                handles
                    .into_iter()
                    .zip(&configs)
                    .map(|(h, c)| {
                        h.join()
                            .unwrap_or_else(|_| TrialResult::failed(c.trial_id, "trial panicked".into(), 0.0))
                    })
                    .collect()
            })
        };
        for (config, mut result) in configs.into_iter().zip(results) {
            result.trial_id = config.trial_id;
            if result.status == TrialStatus::Ok && result.objective.map_or(true, |y| !y.is_finite()) {
                result = TrialResult::failed(config.trial_id, "non-finite objective".into(), result.wall_time);
            }
            let record = TrialRecord { config, result };
            if let Some(path) = journal {
                append_journal(path, &record)?;
            }
            records.push(record);
        }
    }
    Ok(SearchReport { records })
}

/// Completed trials in trial order.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub records: Vec<TrialRecord>,
}

impl SearchReport {
    /// Successful trials by objective (best first, ties by trial id), then failures.
    pub fn ranked(&self) -> Vec<&TrialRecord> {
        let mut r: Vec<&TrialRecord> = self.records.iter().collect();
        r.sort_by(|a, b| {
            let key = |t: &TrialRecord| t.result.objective.unwrap_or(f64::NEG_INFINITY);
            key(b).total_cmp(&key(a)).then(a.config.trial_id.cmp(&b.config.trial_id))
        });
        r
    }

    pub fn best(&self) -> Option<&TrialRecord> {
        self.ranked().into_iter().find(|r| r.result.status == TrialStatus::Ok)
    }

    /// Running maximum of the objective in trial order.
    pub fn best_so_far(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.records
            .iter()
            .map(|r| {
                if let Some(y) = r.result.objective {
                    best = Some(best.map_or(y, |b| b.max(y)));
                }
                best
            })
            .collect()
    }

    /// Ranked CSV. `wall_time` can be left out to compare runs byte-for-byte.
    pub fn to_csv(&self, include_wall_time: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "trial_id",
            "sinusoidal",
            "learned",
            "rotary",
            "alibi",
            "dropout_rate",
            "activation",
            "objective",
            "status",
        ];
        if include_wall_time {
            header.push("wall_time");
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in self.ranked() {
            let p = &r.config.params;
            let mut row = vec![
                r.config.trial_id.to_string(),
                p.sinusoidal.to_string(),
                p.learned.to_string(),
                p.rotary.to_string(),
                p.alibi.to_string(),
                p.dropout_rate.to_string(),
                p.activation.to_string(),
                r.result.objective.map(|y| y.to_string()).unwrap_or_default(),
                r.result.status.as_str().to_string(),
            ];
            if include_wall_time {
                row.push(format!("{:.3}", r.result.wall_time));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// The base run config with the best trial's values and seed applied.
    pub fn best_run_config(&self, base: &RunConfig) -> Option<RunConfig> {
        let best = self.best()?;
        let mut cfg = base.clone();
        cfg.model = best.config.params.apply(&base.model);
        cfg.training.seed = Some(best.config.seed);
        Some(cfg)
    }

    /// Writes `report.csv` and, when a trial succeeded, `best_config.json`.
    pub fn write(&self, dir: &Path, base: &RunConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let report = dir.join(REPORT_FILE);
        fs::write(&report, self.to_csv(true)?).map_err(|e| Error::file(&report, e))?;
        if let Some(cfg) = self.best_run_config(base) {
            let path = dir.join(BEST_CONFIG_FILE);
            fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n").map_err(|e| Error::file(&path, e))?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::trial::run_synthetic;

    #[test]
    fn single_trial_single_row() {
        let s = SearchSettings { n_trials: 1, ..Default::default() };
        let report = run_search(&SearchSpace::default(), &s, &run_synthetic, None, false).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.to_csv(true).unwrap().lines().count(), 2);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let s = SearchSettings { n_trials: 5, ..Default::default() };
        let flaky = |c: &TrialConfig| {
            if c.trial_id % 2 == 0 {
                TrialResult::failed(c.trial_id, "diverged".into(), 0.0)
            } else {
                run_synthetic(c)
            }
        };
        let report = run_search(&SearchSpace::default(), &s, &flaky, None, false).unwrap();
        assert_eq!(report.records.len(), 5);
        let ranked = report.ranked();
        assert_eq!(ranked.last().unwrap().result.status, TrialStatus::Failed);
        assert!(report.best().unwrap().result.objective.is_some());
    }

    #[test]
    fn truncated_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let s = SearchSettings { n_trials: 3, ..Default::default() };
        run_search(&SearchSpace::default(), &s, &run_synthetic, Some(&path), false).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 10]).unwrap();
        assert_eq!(read_journal(&path).unwrap().len(), 2);
    }
}
