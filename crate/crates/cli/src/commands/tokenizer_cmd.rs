//! `init-tokenizer`: learn the byte-pair vocabulary from the configured
//! corpora.

use std::fs;
use std::path::Path;

use desklm_core::tokenizer::{train_bpe, SpecialTokens};

use crate::config::AppConfig;
use crate::data::load_raw;
use crate::error::{AppError, AppResult};

pub fn init_tokenizer_command(config: &Path) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let mut corpus = Vec::new();
    for rel in &cfg.tokenizer.corpus {
        let path = cfg.resolve(rel);
        for doc in load_raw(&path)? {
            corpus.push(doc.text);
        }
    }
    if corpus.is_empty() {
        return Err(AppError::Validation(
            "tokenizer corpus files contained no documents".into(),
        ));
    }
    let vocab = train_bpe(&corpus, cfg.tokenizer.vocab_size, &SpecialTokens::default())
        .map_err(AppError::validation)?;

    let out = cfg.vocab_path();
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(&out, vocab.to_json())
        .map_err(|e| AppError::runtime(format!("{}: {e}", out.display())))?;
    println!(
        "trained vocabulary: {} ids ({} merges) over {} documents -> {}",
        vocab.size(),
        vocab.size() - 256 - vocab.specials().len(),
        corpus.len(),
        out.display()
    );
    Ok(())
}
