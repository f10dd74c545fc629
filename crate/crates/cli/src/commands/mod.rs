//! Subcommand implementations.

pub mod chat;
mod eval;
mod gen_data;
mod merge;
mod report;
mod stages;
mod tokenizer_cmd;

pub use chat::chat_command;
pub use eval::eval_command;
pub use gen_data::gen_data_command;
pub use merge::merge_command;
pub use report::report_command;
pub use stages::{adapt_command, pretrain_command, train_dpo_command, train_sft_command};
pub use tokenizer_cmd::init_tokenizer_command;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use desklm_core::model::ModelConfig;
use desklm_core::numerics::RngState;
use desklm_core::tokenizer::Vocabulary;
use desklm_core::training::StepMetric;

use crate::config::AppConfig;
use crate::error::{AppError, AppResult};

pub(crate) fn load_vocab(cfg: &AppConfig) -> AppResult<Vocabulary> {
    let path = cfg.vocab_path();
    let text = fs::read_to_string(&path).map_err(|e| {
        AppError::validation(format!(
            "{}: {e} (run init-tokenizer first?)",
            path.display()
        ))
    })?;
    Vocabulary::from_json(&text).map_err(AppError::validation)
}

/// The architecture actually instantiated: the configured model with the
/// trained vocabulary's true size.
pub(crate) fn effective_model_config(cfg: &AppConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.size(),
        ..cfg.model.clone()
    }
}

/// Deterministic cap: shuffle under a labelled stream, keep the first
/// `cap`.
pub(crate) fn subsample<T>(mut items: Vec<T>, cap: usize, seed: u64, label: &str) -> Vec<T> {
    if items.len() > cap {
        items.shuffle(&mut RngState::new(seed).stream(label));
        items.truncate(cap);
    }
    items
}

/// Metrics log: JSON-lines, one object per optimizer step.
pub(crate) fn write_metrics(path: &Path, metrics: &[StepMetric]) -> AppResult<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).map_err(AppError::runtime)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, out).map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))
}
