//! Architecture search over positional encodings, dropout and activation.

mod search;
mod space;
mod suggest;
mod trial;

pub use search::{
    read_journal, run_search, trial_seed, Objective, SearchReport, SearchSettings, TrialRecord, BEST_CONFIG_FILE,
    JOURNAL_FILE, REPORT_FILE,
};
pub use space::{ArchParams, SearchSpace, N_PARAMS};
pub use suggest::{random_search_order, Observation, Suggester, Surrogate, DEFAULT_KAPPA, DEFAULT_WARMUP};
pub use trial::{
    run_synthetic, run_trial, synthetic_objective, TrialConfig, TrialResult, TrialStatus, DEFAULT_BUDGET_EPOCHS,
};
