//! `mpdg`: corpus validation, synthetic data, training, decoding and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "mpdg", version, about = "Speaker-aware multi-party dialogue generation")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a JSON Lines corpus and report its size and any violations.
    Validate {
        corpus: PathBuf,
        /// Treat single-speaker dialogues as warnings instead of errors.
        #[arg(long)]
        lenient: bool,
    },
    /// Write a synthetic multi-party corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        dialogues: usize,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, history.csv, config.toml and vocab.json.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML training configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from this checkpoint until the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Weight of the contrastive term.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Train on the language-modeling loss only, without sampling negatives.
        #[arg(long)]
        no_contrastive: bool,
    },
    /// Decode a response for every eligible (context, target) pair of a corpus.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary file; defaults to vocab.json next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Greedy)]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Score predictions against a corpus, optionally per stratum.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = StrataArg::None)]
        strata: StrataArg,
        /// CSV report destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranking accuracy of a checkpoint against both kinds of negatives.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        triples: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrataArg {
    None,
    Speaker,
    Context,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let json = cli.json;
    match commands::run(cli) {
        Ok(summary) => {
            if json {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let (code, message, summary) = match failure {
                Failure::Input(m) => (1u8, m, serde_json::json!({})),
                Failure::Runtime(m) => (2u8, m, serde_json::json!({})),
                Failure::Rejected { message, summary } => (1u8, message, summary),
            };
            eprintln!("error: {message}");
            if json {
                let mut summary = summary;
                summary["ok"] = false.into();
                summary["exit_code"] = code.into();
                summary["error"] = message.into();
                println!("{summary}");
            }
            ExitCode::from(code)
        }
    }
}
