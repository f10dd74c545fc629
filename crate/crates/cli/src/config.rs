//! Pipeline configuration: one JSON document with per-stage sections.
//! Unknown keys are rejected so hyperparameter typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use desklm_core::adapters::LoraConfig;
use desklm_core::model::ModelConfig;
use desklm_core::training::{LossMaskMode, TrainConfig};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Trained vocabulary file (written by init-tokenizer).
    pub vocab: PathBuf,
    /// Stage checkpoints and metrics logs land here.
    pub checkpoint_dir: PathBuf,
    /// Evaluation reports land here.
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    /// Target vocabulary size (bytes + merges + specials).
    pub vocab_size: usize,
    /// JSONL corpora of raw documents the merges are learned from.
    pub corpus: Vec<PathBuf>,
}

fn default_pretrain_lr() -> f32 {
    1e-3
}
fn default_pretrain_epochs() -> usize {
    40
}
fn default_pretrain_batch() -> usize {
    8
}
/// Desk-scale stand-in for the ~100k-document pretraining corpora the
/// full-scale recipe draws on.
fn default_pretrain_records() -> usize {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub dataset: PathBuf,
    #[serde(default = "default_pretrain_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_pretrain_batch")]
    pub batch_size: usize,
    #[serde(default = "default_pretrain_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default)]
    pub grad_clip_norm: Option<f32>,
    #[serde(default = "default_pretrain_records")]
    pub max_records: usize,
}

fn default_sft_lr() -> f32 {
    2e-4
}
fn default_sft_epochs() -> usize {
    62
}
fn default_batch() -> usize {
    4
}
/// Desk-scale stand-in for the ~100K instruction prompts of the full-scale
/// recipe.
fn default_sft_records() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSection {
    pub dataset: PathBuf,
    #[serde(default = "default_sft_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_sft_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default)]
    pub grad_clip_norm: Option<f32>,
    #[serde(default = "default_sft_records")]
    pub max_records: usize,
}

fn default_dpo_lr() -> f32 {
    5e-5
}
fn default_dpo_epochs() -> usize {
    1
}
fn default_beta() -> f32 {
    0.1
}
/// Desk-scale stand-in for the ~40k preference pairs of the full-scale
/// recipe.
fn default_dpo_records() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoSection {
    pub dataset: PathBuf,
    /// The usual rate is reduced for this stage.
    #[serde(default = "default_dpo_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_dpo_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default)]
    pub grad_clip_norm: Option<f32>,
    #[serde(default = "default_beta")]
    pub beta: f32,
    /// Records scored below this are dropped (unscored records pass).
    #[serde(default)]
    pub min_score: Option<f32>,
    /// Source tags excluded outright.
    #[serde(default)]
    pub excluded_sources: Vec<String>,
    #[serde(default = "default_dpo_records")]
    pub max_records: usize,
}

fn default_adapt_epochs() -> usize {
    3
}
fn default_holdout_fraction() -> f32 {
    0.1
}
/// Desk-scale stand-in for the 100k randomly selected raw documents of the
/// full-scale recipe.
fn default_adapt_records() -> usize {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub dataset: PathBuf,
    /// Source-language documents scored before/after for regression
    /// visibility.
    #[serde(default)]
    pub source_holdout: Option<PathBuf>,
    #[serde(default = "default_sft_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_adapt_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default)]
    pub grad_clip_norm: Option<f32>,
    /// Train the full dense weights instead of fresh adapters.
    #[serde(default)]
    pub full_weights: bool,
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f32,
    #[serde(default = "default_adapt_records")]
    pub max_records: usize,
}

fn default_block_size() -> usize {
    64
}
fn default_quantize_base() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub lora: LoraConfig,
    #[serde(default = "default_quantize_base")]
    pub quantize_base: bool,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    pub paths: Paths,
    pub tokenizer: TokenizerSection,
    pub pretrain: PretrainSection,
    pub sft: SftSection,
    pub dpo: DpoSection,
    pub adapt: AdaptSection,

    /// Directory the config was loaded from; relative paths resolve
    /// against it.
    #[serde(skip)]
    base_dir: PathBuf,
}

impl AppConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::validation(format!("config {}: {e}", path.display())))?;
        let mut cfg: AppConfig = serde_json::from_str(&text)
            .map_err(|e| AppError::validation(format!("config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.model.validate().map_err(AppError::validation)?;
        cfg.lora.validate().map_err(AppError::validation)?;
        if cfg.block_size < 2 {
            return Err(AppError::Validation(format!(
                "block_size {} must be >= 2",
                cfg.block_size
            )));
        }
        Ok(cfg)
    }

    /// Resolve a configured path against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.resolve(&self.paths.vocab)
    }

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.resolve(&self.paths.checkpoint_dir)
            .join(format!("{stage}.ckpt"))
    }

    pub fn metrics_path(&self, stage: &str) -> PathBuf {
        self.resolve(&self.paths.checkpoint_dir)
            .join(format!("{stage}.metrics.jsonl"))
    }

    pub fn pretrain_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain.learning_rate,
            batch_size: self.pretrain.batch_size,
            epochs: self.pretrain.epochs,
            grad_clip_norm: self.pretrain.grad_clip_norm,
            weight_decay: self.pretrain.weight_decay,
            seed,
            max_seq_len: self.model.max_seq_len,
            loss_mask_mode: LossMaskMode::FullSequence,
        }
    }

    pub fn sft_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.sft.learning_rate,
            batch_size: self.sft.batch_size,
            epochs: self.sft.epochs,
            grad_clip_norm: self.sft.grad_clip_norm,
            weight_decay: self.sft.weight_decay,
            seed,
            max_seq_len: self.model.max_seq_len,
            loss_mask_mode: LossMaskMode::ResponseOnly,
        }
    }

    pub fn dpo_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.dpo.learning_rate,
            batch_size: self.dpo.batch_size,
            epochs: self.dpo.epochs,
            grad_clip_norm: self.dpo.grad_clip_norm,
            weight_decay: self.dpo.weight_decay,
            seed,
            max_seq_len: self.model.max_seq_len,
            loss_mask_mode: LossMaskMode::ResponseOnly,
        }
    }

    pub fn adapt_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.adapt.learning_rate,
            batch_size: self.adapt.batch_size,
            epochs: self.adapt.epochs,
            grad_clip_norm: self.adapt.grad_clip_norm,
            weight_decay: self.adapt.weight_decay,
            seed,
            max_seq_len: self.model.max_seq_len,
            loss_mask_mode: LossMaskMode::FullSequence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "seed": 7,
            "model": {
                "n_layers": 2, "d_model": 64, "n_heads": 4, "d_ff": 128,
                "vocab_size": 512, "max_seq_len": 96
            },
            "lora": {"rank": 8, "alpha": 16.0, "targets": ["wq", "wk", "wv", "wo"]},
            "paths": {"vocab": "vocab.json", "checkpoint_dir": "ckpt", "report_dir": "reports"},
            "tokenizer": {"vocab_size": 512, "corpus": ["raw_source.jsonl"]},
            "pretrain": {"dataset": "raw_source.jsonl"},
            "sft": {"dataset": "sft.jsonl"},
            "dpo": {"dataset": "prefs.jsonl"},
            "adapt": {"dataset": "raw_target.jsonl"}
        })
    }

    fn write_and_load(v: &serde_json::Value) -> AppResult<AppConfig> {
        let dir = std::env::temp_dir().join(format!("desklm-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("config.json");
        std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
        AppConfig::load(&p)
    }

    #[test]
    fn stage_defaults_carry_pinned_values() {
        let cfg = write_and_load(&minimal_json()).unwrap();
        assert_eq!(cfg.sft.learning_rate, 2e-4);
        assert_eq!(cfg.dpo.learning_rate, 5e-5);
        assert_eq!(cfg.dpo.epochs, 1);
        assert_eq!(cfg.dpo.batch_size, 4);
        assert_eq!(cfg.adapt.epochs, 3);
        assert_eq!(cfg.adapt.learning_rate, 2e-4);
        assert_eq!(cfg.dpo.beta, 0.1);
        assert_eq!(cfg.sft.max_records, 512);
        assert_eq!(cfg.dpo.max_records, 256);
        assert_eq!(cfg.adapt.max_records, 1024);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal_json();
        v["sft"]["learnig_rate"] = serde_json::json!(0.1);
        let err = write_and_load(&v).unwrap_err();
        assert!(matches!(err, AppError::Validation(_)));
        assert!(err.to_string().contains("learnig_rate"));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = write_and_load(&minimal_json()).unwrap();
        assert!(cfg.vocab_path().ends_with("vocab.json"));
        assert!(cfg.vocab_path().is_absolute() || cfg.vocab_path().parent().is_some());
    }
}
