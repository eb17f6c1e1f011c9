use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mpdg::corpus::{
    parse_corpus, validate_corpus, write_corpus, CorpusError, Dialogue, ParseOptions, Vocabulary,
};
use mpdg::metrics::{build_report, format_table, read_predictions, write_predictions, MetricError, Prediction, Strata};
use mpdg::model::{DecodeMode, ModelError};
use mpdg::seed;
use mpdg::synth::{generate, SynthConfig};
use mpdg::train::{
    build_pool, load_checkpoint, ranking_accuracy, sample_triples, save_checkpoint, train_with, write_history_csv,
    Checkpoint, TrainConfig, TrainError,
};
use serde_json::{json, Value};

use crate::{Cli, Command, Mode, StrataArg};

/// Exit code 1 for bad or missing inputs, 2 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Runtime(String),
    /// Input rejected after producing a report worth printing.
    Rejected { message: String, summary: Value },
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Corpus(c) => c.into(),
            TrainError::Config(_) | TrainError::Integrity(_) | TrainError::Version { .. } => {
                Failure::Input(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn open_input(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(path, e))
}

fn read_corpus(path: &Path) -> Result<Vec<Dialogue>, Failure> {
    parse_corpus(open_input(path)?, ParseOptions::default())
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_model(checkpoint: &Path, vocab: Option<&PathBuf>) -> Result<(Checkpoint, Vocabulary), Failure> {
    if !checkpoint.is_file() {
        return Err(Failure::Input(format!("checkpoint {} not found", checkpoint.display())));
    }
    let ckpt = load_checkpoint(checkpoint).map_err(|e| match Failure::from(e) {
        Failure::Input(m) | Failure::Runtime(m) | Failure::Rejected { message: m, .. } => {
            Failure::Input(format!("{}: {m}", checkpoint.display()))
        }
    })?;
    let vocab_path = vocab
        .cloned()
        .unwrap_or_else(|| checkpoint.with_file_name("vocab.json"));
    let text = fs::read_to_string(&vocab_path)
        .map_err(|e| Failure::Input(format!("cannot read vocabulary {}: {e}", vocab_path.display())))?;
    let vocab = Vocabulary::from_json(&text)?;
    if vocab.content_hash() != ckpt.vocab_hash {
        return Err(Failure::Input(format!(
            "vocabulary {} does not match the checkpoint",
            vocab_path.display()
        )));
    }
    Ok((ckpt, vocab))
}

struct Printer {
    json: bool,
}

impl Printer {
    fn say(&self, text: &str) {
        if !self.json {
            println!("{text}");
        }
    }
}

pub fn run(cli: Cli) -> Result<Value, Failure> {
    let out = Printer { json: cli.json };
    match cli.command {
        Command::Validate { corpus, lenient } => validate(&out, &corpus, lenient),
        Command::Synth {
            dialogues,
            speakers,
            out: path,
        } => {
            let cfg = SynthConfig {
                dialogues,
                speakers,
                seed: cli.seed.unwrap_or(0),
                ..SynthConfig::default()
            };
            let corpus = generate(&cfg)?;
            let mut w = create_output(&path)?;
            write_corpus(&mut w, &corpus).and_then(|_| w.flush().map_err(CorpusError::from))?;
            let utterances: usize = corpus.iter().map(Dialogue::len).sum();
            out.say(&format!(
                "wrote {} dialogues ({utterances} utterances) to {}",
                corpus.len(),
                path.display()
            ));
            Ok(json!({ "ok": true, "command": "synth", "dialogues": corpus.len(), "utterances": utterances, "seed": cfg.seed }))
        }
        Command::Train {
            corpus,
            out: dir,
            config,
            resume,
            epochs,
            learning_rate,
            batch_size,
            lambda,
            margin,
            no_contrastive,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
                    TrainConfig::from_toml(&text)?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = lambda {
                cfg.objective.lambda_weight = v;
            }
            if let Some(v) = margin {
                cfg.objective.margin = v;
            }
            if no_contrastive {
                cfg.contrastive_enabled = false;
            }
            cfg.validate()?;
            train(&out, &corpus, &dir, cfg, resume.as_deref())
        }
        Command::Generate {
            checkpoint,
            corpus,
            out: path,
            vocab,
            mode,
            temperature,
            max_len,
        } => {
            let (ckpt, vocab) = load_model(&checkpoint, vocab.as_ref())?;
            let dialogues = read_corpus(&corpus)?;
            let pool = build_pool(dialogues, &vocab, &ckpt.train_config)?;
            let mode = match mode {
                Mode::Greedy => DecodeMode::Greedy,
                Mode::Sample => DecodeMode::Sample { temperature },
            };
            let base = cli.seed.unwrap_or(0);
            let mut predictions = Vec::with_capacity(pool.examples().len());
            for (i, ex) in pool.examples().iter().enumerate() {
                let prefix = ex.model_prefix(&vocab)?;
                let ids = ckpt.params.decode(&prefix, mode, max_len, seed::derive(base, &[i as u64]))?;
                predictions.push(Prediction {
                    dialogue_id: ex.dialogue_id.clone(),
                    target_index: ex.target_index,
                    candidate: vocab.decode_response(&ids),
                });
            }
            let mut w = create_output(&path)?;
            write_predictions(&predictions, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| runtime(&path, e))?;
            out.say(&format!("wrote {} predictions to {}", predictions.len(), path.display()));
            Ok(json!({ "ok": true, "command": "generate", "predictions": predictions.len(), "skipped": pool.skipped(), "seed": base }))
        }
        Command::Evaluate {
            predictions,
            corpus,
            strata,
            out: path,
        } => {
            let preds = read_predictions(open_input(&predictions)?)
                .map_err(|e| Failure::Input(format!("{}: {e}", predictions.display())))?;
            let dialogues = read_corpus(&corpus)?;
            let strata = match strata {
                StrataArg::None => Strata::None,
                StrataArg::Speaker => Strata::Speaker,
                StrataArg::Context => Strata::Context,
            };
            let rows = build_report(&preds, &dialogues, strata)?;
            let mut w = create_output(&path)?;
            mpdg::metrics::write_report_csv(&rows, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| runtime(&path, e))?;
            out.say(format_table(&rows).trim_end());
            Ok(json!({ "ok": true, "command": "evaluate", "report": rows }))
        }
        Command::Rank {
            checkpoint,
            corpus,
            vocab,
            triples,
        } => {
            let (ckpt, vocab) = load_model(&checkpoint, vocab.as_ref())?;
            let pool = build_pool(read_corpus(&corpus)?, &vocab, &ckpt.train_config)?;
            let base = cli.seed.unwrap_or(0);
            let sampled = sample_triples(&pool, triples, base)?;
            let (ctx, spk) = ranking_accuracy(&ckpt.params, &sampled, &vocab, &ckpt.train_config.objective)?;
            out.say(&format!(
                "triples {triples}\ncontext ranking accuracy {ctx:.4}\nspeaker ranking accuracy {spk:.4}"
            ));
            Ok(json!({ "ok": true, "command": "rank", "triples": triples, "context_accuracy": ctx, "speaker_accuracy": spk, "seed": base }))
        }
    }
}

fn validate(out: &Printer, path: &Path, lenient: bool) -> Result<Value, Failure> {
    let file = File::open(path).map_err(|e| runtime(path, e))?;
    let report = validate_corpus(BufReader::new(file), ParseOptions { lenient }).map_err(|e| runtime(path, e))?;
    for w in &report.warnings {
        out.say(&format!("warning: line {}: {}", w.line, w.message));
    }
    for (_, e) in &report.errors {
        out.say(&format!("error: {e}"));
    }
    out.say(&format!(
        "dialogues {}\nutterances {}\nspeakers {}",
        report.dialogues.len(),
        report.utterance_count(),
        report.speaker_count()
    ));
    let summary = json!({
        "ok": report.is_ok(),
        "command": "validate",
        "dialogues": report.dialogues.len(),
        "utterances": report.utterance_count(),
        "speakers": report.speaker_count(),
        "warnings": report.warnings,
        "errors": report.errors.iter().map(|(line, e)| json!({ "line": line, "message": e.to_string() })).collect::<Vec<_>>(),
    });
    if report.is_ok() {
        Ok(summary)
    } else {
        Err(Failure::Rejected {
            message: format!("{} violation(s) in {}", report.errors.len(), path.display()),
            summary,
        })
    }
}

fn train(
    out: &Printer,
    corpus: &Path,
    dir: &Path,
    cfg: TrainConfig,
    resume: Option<&Path>,
) -> Result<Value, Failure> {
    let dialogues = read_corpus(corpus)?;
    let vocab = Vocabulary::build(&dialogues, cfg.min_count, cfg.max_speaker_slots)?;
    let start = match resume {
        Some(p) => Some(load_checkpoint(p).map_err(|e| match Failure::from(e) {
            Failure::Input(m) | Failure::Runtime(m) | Failure::Rejected { message: m, .. } => {
                Failure::Input(format!("{}: {m}", p.display()))
            }
        })?),
        None => None,
    };
    let pool = build_pool(dialogues, &vocab, &cfg)?;
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    let result = train_with(&pool, &cfg, start, |s| {
        out.say(&format!(
            "epoch {:>3}  lm {:.4}  contrastive {}  total {:.4}",
            s.epoch,
            s.lm,
            s.contrastive.map_or("-".to_string(), |c| format!("{c:.4}")),
            s.total
        ));
    });
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::NonFiniteLoss { epoch, diagnostic }) => {
            let path = dir.join("diagnostic.ckpt");
            save_checkpoint(&diagnostic, &path)?;
            return Err(Failure::Runtime(format!(
                "loss became non-finite in epoch {epoch}; state before the failing step saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let ckpt_path = dir.join("model.ckpt");
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    let history_path = dir.join("history.csv");
    let mut w = create_output(&history_path)?;
    write_history_csv(&outcome.history, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| runtime(&history_path, e))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, outcome.checkpoint.train_config.to_toml()).map_err(|e| runtime(&config_path, e))?;
    let vocab_path = dir.join("vocab.json");
    fs::write(&vocab_path, vocab.to_json()).map_err(|e| runtime(&vocab_path, e))?;

    out.say(&format!(
        "trained {} epoch(s) on {} examples; checkpoint {}",
        outcome.history.len(),
        pool.examples().len(),
        ckpt_path.display()
    ));
    let last = outcome.history.last();
    Ok(json!({
        "ok": true,
        "command": "train",
        "epochs": outcome.checkpoint.epoch,
        "examples": pool.examples().len(),
        "skipped": pool.skipped(),
        "vocab_size": vocab.len(),
        "parameters": outcome.checkpoint.params.num_parameters(),
        "final": last,
        "checkpoint": ckpt_path,
        "seed": outcome.checkpoint.train_config.seed,
    }))
}
