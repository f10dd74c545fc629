//! Command-line front end for the desk-scale adaptation pipeline: dataset
//! ingestion, checkpoint hand-off between stages, evaluation, and the chat
//! loop.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod synth;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use error::AppResult;

#[derive(Parser)]
#[command(
    name = "desklm",
    version,
    about = "Desk-scale language-model adaptation: warm-up, instruction tuning, preference optimization, language adaptation, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic corpora, datasets, tasks and a ready-to-run config.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the byte-pair vocabulary from the configured corpora.
    InitTokenizer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Initialize a model and warm it up on the source-language corpus.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Instruction tuning with adapters over the frozen warm-up weights.
    TrainSft {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to start from (defaults to the pretrain checkpoint).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Preference optimization against a frozen stage-start reference.
    TrainDpo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to start from (defaults to the sft checkpoint).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Continued pretraining on the raw target-language corpus.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to start from (defaults to dpo, falling back to sft).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Fold adapters into dense weights.
    Merge {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint over a directory of task files.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report JSON destination (defaults to the configured report
        /// directory and the model name).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Column label in the report (defaults to the checkpoint stem).
        #[arg(long)]
        model_name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Interactive chat over a checkpoint.
    Chat {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// System prompt override.
        #[arg(long)]
        system: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        temperature: f32,
        #[arg(long, default_value_t = 1.0)]
        top_p: f32,
        #[arg(long, default_value_t = 128)]
        max_new_tokens: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a comparison table from saved report files.
    Report {
        /// Report JSON files, one column each, in order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::GenData { out_dir, seed } => commands::gen_data_command(&out_dir, seed),
        Command::InitTokenizer { config } => commands::init_tokenizer_command(&config),
        Command::Pretrain { config, seed } => commands::pretrain_command(&config, seed),
        Command::TrainSft { config, seed, from } => {
            commands::train_sft_command(&config, seed, from)
        }
        Command::TrainDpo { config, seed, from } => {
            commands::train_dpo_command(&config, seed, from)
        }
        Command::Adapt { config, seed, from } => commands::adapt_command(&config, seed, from),
        Command::Merge { checkpoint, out } => commands::merge_command(&checkpoint, &out),
        Command::Eval {
            config,
            tasks,
            checkpoint,
            out,
            model_name,
            seed,
        } => commands::eval_command(&config, &tasks, &checkpoint, out.as_deref(), model_name, seed),
        Command::Chat {
            config,
            checkpoint,
            system,
            temperature,
            top_p,
            max_new_tokens,
            seed,
        } => commands::chat_command(
            &config,
            &checkpoint,
            system,
            temperature,
            top_p,
            max_new_tokens,
            seed,
        ),
        Command::Report { inputs, out } => commands::report_command(&inputs, out.as_deref()),
    }
}

/// Parse and execute; returns the process exit code (0 success,
/// 1 validation error, 2 runtime error).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit
            // code 0; everything else is a usage problem.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
