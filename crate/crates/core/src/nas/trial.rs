use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::space::ArchParams;
use crate::autograd::Activation;
use crate::error::Result;
use crate::model::Seq2SeqModel;
use crate::train::{evaluate, train, EpochMetrics, PreparedData, RunConfig, TrainingConfig};

pub const DEFAULT_BUDGET_EPOCHS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial_id: usize,
    pub seed: u64,
    pub params: ArchParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    /// Present iff `status` is ok.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    /// Seconds.
    pub wall_time: f64,
    #[serde(default)]
    pub curve: Vec<EpochMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    pub fn ok(trial_id: usize, objective: f64, curve: Vec<EpochMetrics>, wall_time: f64) -> Self {
        Self {
            trial_id,
            objective: Some(objective),
            status: TrialStatus::Ok,
            wall_time,
            curve,
            error: None,
        }
    }

    pub fn failed(trial_id: usize, error: String, wall_time: f64) -> Self {
        Self {
            trial_id,
            objective: None,
            status: TrialStatus::Failed,
            wall_time,
            curve: Vec::new(),
            error: Some(error),
        }
    }
}

/// `10·(encodings on) − 50·dropout + 5·[tanh]`, maximized at all four
/// encodings, dropout 0 and tanh.
pub fn synthetic_objective(arch: &ArchParams) -> f64 {
    10.0 * arch.encodings_on() as f64 - 50.0 * arch.dropout_rate
        + if arch.activation == Activation::Tanh { 5.0 } else { 0.0 }
}

pub fn run_synthetic(config: &TrialConfig) -> TrialResult {
    TrialResult::ok(config.trial_id, synthetic_objective(&config.params), Vec::new(), 0.0)
}

/// Trains `base.model` overridden by the trial's values for `budget_epochs`
/// and scores greedy validation BLEU. Errors become a failed result.
pub fn run_trial(config: &TrialConfig, budget_epochs: usize, base: &RunConfig, data: &PreparedData) -> TrialResult {
    let start = Instant::now();
    let attempt = || -> Result<(f64, Vec<EpochMetrics>)> {
        let mut model_cfg = config.params.apply(&base.model);
        model_cfg.src_vocab = data.src_vocab.len();
        model_cfg.tgt_vocab = data.tgt_vocab.len();
        let mut model = Seq2SeqModel::<f32>::build(&model_cfg, config.seed)?;
        let training = TrainingConfig {
            epochs: budget_epochs,
            seed: Some(config.seed),
            ..base.training.clone()
        };
        let curve = train(&mut model, data, &training, config.seed, |_, _| Ok(()))?;
        let objective = match curve.last() {
            Some(m) => m.val_bleu,
            None => evaluate(&model, &data.valid)?.bleu,
        };
        Ok((objective, curve))
    };
    let elapsed = || start.elapsed().as_secs_f64();
    match attempt() {
        Ok((objective, curve)) => TrialResult::ok(config.trial_id, objective, curve, elapsed()),
        Err(e) => TrialResult::failed(config.trial_id, e.to_string(), elapsed()),
    }
}
