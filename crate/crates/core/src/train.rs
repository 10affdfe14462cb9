//! Run configuration, data preparation and the training loop.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::bleu::{bleu_corpus, Smoothing};
use crate::data::{
    batchify, filter_by_context, make_toy_corpus, read_lines, ParallelCorpus, ToyTask, Vocab,
};
use crate::error::{Error, Result};
use crate::generate::translate;
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::nn::Ctx;
use crate::optim::{adam_step, AdamConfig, AdamState, WarmupSchedule};
use crate::rng::SeedStream;

pub const SEED_ENV: &str = "FORGE_SEED";
pub const LABEL_SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Required at run time; `FORGE_SEED` overrides it.
    pub seed: Option<u64>,
    pub warmup_steps: usize,
    /// Multiplier on the warmup schedule.
    pub lr_factor: f64,
    /// Label smoothing of 0.1 when on.
    pub label_smoothing: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            seed: None,
            warmup_steps: 400,
            lr_factor: 1.0,
            label_smoothing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// Synthetic task; token `"k"` is id `k`.
    Toy {
        task: ToyTask,
        vocab_size: usize,
        min_len: usize,
        max_len: usize,
        n_train: usize,
        n_valid: usize,
    },
    /// Aligned UTF-8 text files, one whitespace-tokenized sentence per line.
    /// Relative paths resolve against the config file's directory.
    Files {
        train_src: PathBuf,
        train_tgt: PathBuf,
        valid_src: PathBuf,
        valid_tgt: PathBuf,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Toy {
            task: ToyTask::Reverse,
            vocab_size: 20,
            min_len: 5,
            max_len: 12,
            n_train: 2000,
            n_valid: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(20, 20),
            training: TrainingConfig::default(),
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Parses a JSON config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataConfig::Files {
            train_src,
            train_tgt,
            valid_src,
            valid_tgt,
        } = &mut self.data
        {
            for p in [train_src, train_tgt, valid_src, valid_tgt] {
                fix(p);
            }
        }
        fix(&mut self.output_dir);
    }

    /// `FORGE_SEED` if set, else the configured seed.
    pub fn resolve_seed(&self) -> Result<u64> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            return v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
        }
        self.training
            .seed
            .ok_or_else(|| Error::InvalidConfig(format!("training.seed is mandatory (or set {SEED_ENV})")))
    }
}

/// Filtered corpora plus the vocabularies they were encoded with.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    /// Pairs removed by the context-window filter.
    pub dropped: usize,
}

pub fn prepare_data(data: &DataConfig, max_len: usize, seed: u64) -> Result<PreparedData> {
    let (train, valid, src_vocab, tgt_vocab) = match data {
        DataConfig::Toy {
            task,
            vocab_size,
            min_len,
            max_len: longest,
            n_train,
            n_valid,
        } => {
            let stream = SeedStream::new(seed);
            let train = make_toy_corpus(*task, *vocab_size, (*min_len, *longest), *n_train, stream.named("train").derive_seed())?;
            let valid = make_toy_corpus(*task, *vocab_size, (*min_len, *longest), *n_valid, stream.named("valid").derive_seed())?;
            (train, valid, Vocab::toy(*vocab_size), Vocab::toy(*vocab_size))
        }
        DataConfig::Files {
            train_src,
            train_tgt,
            valid_src,
            valid_tgt,
        } => {
            let (ts, tt) = (read_lines(train_src)?, read_lines(train_tgt)?);
            let (vs, vt) = (read_lines(valid_src)?, read_lines(valid_tgt)?);
            let src_vocab = Vocab::from_lines(ts.iter().map(String::as_str));
            let tgt_vocab = Vocab::from_lines(tt.iter().map(String::as_str));
            let train = ParallelCorpus::from_lines(&ts, &tt, &src_vocab, &tgt_vocab)?;
            let valid = ParallelCorpus::from_lines(&vs, &vt, &src_vocab, &tgt_vocab)?;
            (train, valid, src_vocab, tgt_vocab)
        }
    };
    let (train, dropped_train) = filter_by_context(&train, max_len);
    let (valid, dropped_valid) = filter_by_context(&valid, max_len);
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(PreparedData {
        train,
        valid,
        src_vocab,
        tgt_vocab,
        dropped: dropped_train + dropped_valid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Token-weighted mean training loss of the epoch.
    pub train_loss: f64,
    pub val_bleu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    /// Fraction of outputs exactly equal to their reference.
    pub exact_match: f64,
    pub hypotheses: Vec<Vec<usize>>,
}

/// Greedy-decodes every source, capped at `2·len + 10` tokens, and scores
/// against the targets.
pub fn evaluate(model: &Seq2SeqModel<f32>, corpus: &ParallelCorpus) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Ok(EvalReport {
            bleu: 0.0,
            exact_match: 0.0,
            hypotheses: Vec::new(),
        });
    }
    let max_len = model.config().max_len;
    let hypotheses = corpus
        .pairs()
        .iter()
        .map(|(s, _)| translate(model, s, 1, 0.0, (2 * s.len() + 10).min(max_len)))
        .collect::<Result<Vec<_>>>()?;
    let references: Vec<Vec<usize>> = corpus.pairs().iter().map(|(_, t)| t.clone()).collect();
    let exact = hypotheses.iter().zip(&references).filter(|(h, r)| h == r).count();
    Ok(EvalReport {
        bleu: bleu_corpus(&hypotheses, &references, 4, Smoothing::None)?,
        exact_match: exact as f64 / references.len() as f64,
        hypotheses,
    })
}

/// Trains for `cfg.epochs` epochs; `on_epoch` runs after each epoch's evaluation.
pub fn train(
    model: &mut Seq2SeqModel<f32>,
    data: &PreparedData,
    cfg: &TrainingConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics, &Seq2SeqModel<f32>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let schedule = WarmupSchedule {
        d_model: model.config().d_model,
        warmup_steps: cfg.warmup_steps.max(1),
        factor: cfg.lr_factor,
    };
    let smoothing = if cfg.label_smoothing { LABEL_SMOOTHING } else { 0.0 };
    let max_len = model.config().max_len;
    let seeds = SeedStream::new(seed);
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let batches = batchify(&data.train, cfg.batch_size, max_len, Some(seeds.named("shuffle").child(epoch as u64)))?;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for batch in &batches {
            step += 1;
            let tape = Tape::new();
            let loss_value = {
                let ctx = Ctx::new(&tape, model.params(), true, seeds.named("dropout").child(step as u64));
                let loss = model.loss(&ctx, batch, smoothing)?;
                let grads = tape.backward(loss)?;
                let v = loss.value().item() as f64;
                (v, grads)
            };
            let (v, grads) = loss_value;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            model.params_mut().accumulate_grads(&tape, &grads);
            adam.set_lr(schedule.lr(step));
            adam_step(model.params_mut(), &mut adam)?;
            if model.params().iter().any(|p| p.value.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { step });
            }
            let n = batch.target_tokens();
            loss_sum += v * n as f64;
            tokens += n;
        }
        let m = EpochMetrics {
            epoch,
            step,
            train_loss: loss_sum / tokens.max(1) as f64,
            val_bleu: evaluate(model, &data.valid)?.bleu,
        };
        on_epoch(&m, model)?;
        metrics.push(m);
    }
    Ok(metrics)
}

pub const METRICS_HEADER: &str = "epoch,step,train_loss,val_bleu";

pub fn metrics_row(m: &EpochMetrics) -> String {
    format!("{},{},{:.6},{:.4}", m.epoch, m.step, m.train_loss, m.val_bleu)
}
