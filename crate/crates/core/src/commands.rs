//! The `forge` command line: argument parsing and the four subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bleu::{bleu_lines, Smoothing};
use crate::checkpoint;
use crate::data::{read_lines, write_lines};
use crate::error::{Error, Result};
use crate::generate::{translate, DEFAULT_LENGTH_PENALTY};
use crate::model::Seq2SeqModel;
use crate::nas::{
    run_search, run_synthetic, run_trial, SearchReport, SearchSettings, SearchSpace, TrialConfig, TrialResult,
    DEFAULT_BUDGET_EPOCHS, JOURNAL_FILE,
};
use crate::train::{metrics_row, prepare_data, train, EpochMetrics, RunConfig, METRICS_HEADER, SEED_ENV};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Train, decode, score and search encoder-decoder transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SmoothingArg {
    None,
    AddOneOnZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Train each trial and score validation BLEU.
    Train,
    /// The closed-form synthetic objective; no training.
    Synthetic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON run config.
    Train { config: PathBuf },
    /// Decode one output line per input line.
    Translate {
        checkpoint: PathBuf,
        input: PathBuf,
        /// Beam width; 1 is greedy.
        #[arg(long, default_value_t = 1)]
        beam: usize,
        /// Length penalty exponent.
        #[arg(long, default_value_t = DEFAULT_LENGTH_PENALTY)]
        alpha: f64,
        /// Generated-token limit; defaults to the model's context window.
        #[arg(long)]
        max_len: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        hypothesis: PathBuf,
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = SmoothingArg::None)]
        smoothing: SmoothingArg,
    },
    /// Architecture search from a JSON search config.
    Nas {
        config: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Continue from the journal in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveKind>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => {
            let summary = cmd_train(&config)?;
            if let Some(m) = summary.last() {
                println!("epoch {} step {} loss {:.4} val BLEU {:.2}", m.epoch, m.step, m.train_loss, m.val_bleu);
            }
            Ok(())
        }
        Command::Translate {
            checkpoint,
            input,
            beam,
            alpha,
            max_len,
            output,
        } => {
            let lines = cmd_translate(&checkpoint, &input, beam, alpha, max_len)?;
            match output {
                Some(path) => write_lines(&path, &lines),
                None => {
                    let mut out = std::io::stdout().lock();
                    for l in lines {
                        writeln!(out, "{l}")?;
                    }
                    Ok(())
                }
            }
        }
        Command::Bleu {
            hypothesis,
            reference,
            smoothing,
        } => {
            let smoothing = match smoothing {
                SmoothingArg::None => Smoothing::None,
                SmoothingArg::AddOneOnZero => Smoothing::AddOneOnZero,
            };
            println!("BLEU = {:.4}", cmd_bleu(&hypothesis, &reference, smoothing)?);
            Ok(())
        }
        Command::Nas {
            config,
            parallelism,
            resume,
            objective,
        } => {
            let report = cmd_nas(&config, parallelism, resume, objective)?;
            if let Some(best) = report.best() {
                println!(
                    "best trial {} objective {:.4}: {}",
                    best.config.trial_id,
                    best.result.objective.unwrap_or(f64::NAN),
                    serde_json::to_string(&best.config.params)?
                );
            }
            Ok(())
        }
    }
}

/// Trains per the run config, writing `metrics.csv` and `model.ckpt` to the
/// output directory. The checkpoint is refreshed after every epoch, so a
/// numeric failure leaves the last good one in place.
pub fn cmd_train(config_path: &Path) -> Result<Vec<EpochMetrics>> {
    let cfg = RunConfig::load(config_path)?;
    let seed = cfg.resolve_seed()?;
    let data = prepare_data(&cfg.data, cfg.model.max_len, seed)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.src_vocab = data.src_vocab.len();
    model_cfg.tgt_vocab = data.tgt_vocab.len();
    let mut model = Seq2SeqModel::<f32>::build(&model_cfg, seed)?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    checkpoint::save(&ckpt, &model, &data.src_vocab, &data.tgt_vocab)?;
    let mut csv = format!("{METRICS_HEADER}\n");
    fs::write(&metrics_path, &csv).map_err(|e| Error::file(&metrics_path, e))?;
    if data.dropped > 0 {
        eprintln!("dropped {} pairs longer than the context window of {}", data.dropped, model_cfg.max_len);
    }

    train(&mut model, &data, &cfg.training, seed, |m, model| {
        eprintln!("epoch {:>3}  step {:>6}  loss {:.4}  val BLEU {:.2}", m.epoch, m.step, m.train_loss, m.val_bleu);
        csv.push_str(&metrics_row(m));
        csv.push('\n');
        fs::write(&metrics_path, &csv).map_err(|e| Error::file(&metrics_path, e))?;
        checkpoint::save(&ckpt, model, &data.src_vocab, &data.tgt_vocab)
    })
}

/// Decodes each input line; unknown tokens map to unk.
pub fn cmd_translate(ckpt: &Path, input: &Path, beam: usize, alpha: f64, max_len: Option<usize>) -> Result<Vec<String>> {
    if beam == 0 {
        return Err(Error::InvalidArgument("--beam must be at least 1".into()));
    }
    let loaded = checkpoint::load(ckpt)?;
    let window = loaded.model.config().max_len;
    let limit = max_len.unwrap_or(window);
    read_lines(input)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let src = loaded.src_vocab.encode(line);
            if src.len() + 2 > window {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: {} tokens exceed the maximum context window of {} (including bos/eos)",
                    input.display(),
                    i + 1,
                    src.len(),
                    window
                )));
            }
            let out = translate(&loaded.model, &src, beam, alpha, limit)?;
            Ok(loaded.tgt_vocab.decode(&out))
        })
        .collect()
}

pub fn cmd_bleu(hypothesis: &Path, reference: &Path, smoothing: Smoothing) -> Result<f64> {
    bleu_lines(&read_lines(hypothesis)?, &read_lines(reference)?, smoothing)
}

/// Search config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NasConfig {
    pub space: SearchSpace,
    pub search: SearchSettings,
    pub objective: ObjectiveKind,
    pub budget_epochs: usize,
    /// Model, training and data settings every trial starts from.
    pub base: RunConfig,
    pub output_dir: PathBuf,
}

impl Default for NasConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            search: SearchSettings::default(),
            objective: ObjectiveKind::Train,
            budget_epochs: DEFAULT_BUDGET_EPOCHS,
            base: RunConfig::default(),
            output_dir: PathBuf::from("runs/nas"),
        }
    }
}

impl NasConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: NasConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.base.resolve_paths(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }
}

/// Runs the search, writing `journal.jsonl`, `report.csv` and
/// `best_config.json` to the output directory.
pub fn cmd_nas(
    config_path: &Path,
    parallelism: Option<usize>,
    resume: bool,
    objective: Option<ObjectiveKind>,
) -> Result<SearchReport> {
    let mut cfg = NasConfig::load(config_path)?;
    if let Some(p) = parallelism {
        cfg.search.parallelism = p;
    }
    if let Some(o) = objective {
        cfg.objective = o;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.search.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
    }
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
    let journal = dir.join(JOURNAL_FILE);

    let report = match cfg.objective {
        ObjectiveKind::Synthetic => run_search(&cfg.space, &cfg.search, &run_synthetic, Some(&journal), resume)?,
        ObjectiveKind::Train => {
            let data = prepare_data(&cfg.base.data, cfg.base.model.max_len, cfg.search.seed)?;
            let budget = cfg.budget_epochs;
            let base = &cfg.base;
            let objective = |c: &TrialConfig| -> TrialResult {
                let r = run_trial(c, budget, base, &data);
                eprintln!(
                    "trial {:>3}  {}  objective {}",
                    c.trial_id,
                    r.status.as_str(),
                    r.objective.map_or("-".into(), |y| format!("{y:.2}"))
                );
                r
            };
            run_search(&cfg.space, &cfg.search, &objective, Some(&journal), resume)?
        }
    };
    let mut base = cfg.base.clone();
    base.training.seed = base.training.seed.or(Some(cfg.search.seed));
    report.write(&dir, &base)?;
    Ok(report)
}
