//! The four training-stage commands. Each reads its inputs, runs the stage,
//! and writes a checkpoint (with provenance appended) plus a metrics log.

use std::path::{Path, PathBuf};

use desklm_core::adapters::attach_lora;
use desklm_core::model::init_model;
use desklm_core::numerics::RngState;
use desklm_core::training::{
    filter_preferences, run_adaptation, run_dpo, run_pretrain, run_sft, DpoConfig,
};

use crate::checkpoint::{
    dataset_digest, load_checkpoint, require_stage, save_checkpoint, LoadedModel, ProvenanceEntry,
};
use crate::config::AppConfig;
use crate::data::{load_preferences, load_raw, load_sft};
use crate::error::{AppError, AppResult};

use super::{effective_model_config, load_vocab, subsample, write_metrics};

fn stage_seed(cfg: &AppConfig, cli_seed: Option<u64>) -> u64 {
    cli_seed.unwrap_or(cfg.seed)
}

/// Initialize a fresh model and warm it up on the source-language corpus.
/// Stands in for a pretrained base, which desk scale does not have.
pub fn pretrain_command(config: &Path, cli_seed: Option<u64>) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let seed = stage_seed(&cfg, cli_seed);
    let vocab = load_vocab(&cfg)?;
    let dataset_path = cfg.resolve(&cfg.pretrain.dataset);
    let docs = load_raw(&dataset_path)?;
    let docs = subsample(docs, cfg.pretrain.max_records, seed, "pretrain.subsample");
    if docs.is_empty() {
        return Err(AppError::Validation("pretrain corpus is empty".into()));
    }

    let model_cfg = effective_model_config(&cfg, &vocab);
    let mut weights =
        init_model(&model_cfg, &RngState::new(seed)).map_err(AppError::validation)?;
    let tc = cfg.pretrain_train_config(seed);
    let metrics =
        run_pretrain(&mut weights, &vocab, &docs, &tc).map_err(AppError::runtime)?;

    let provenance = vec![ProvenanceEntry {
        stage: "pretrain".into(),
        dataset_digest: dataset_digest(&dataset_path)?,
    }];
    let out = cfg.checkpoint_path("pretrain");
    save_checkpoint(&LoadedModel::Dense(weights), &provenance, &out)?;
    write_metrics(&cfg.metrics_path("pretrain"), &metrics)?;
    println!(
        "pretrain: {} steps over {} docs, final loss {:.4} -> {}",
        metrics.len(),
        docs.len(),
        metrics.last().map(|m| m.loss).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Instruction tuning: adapters over the (optionally quantized) frozen
/// warm-up weights.
pub fn train_sft_command(config: &Path, cli_seed: Option<u64>, from: Option<PathBuf>) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let seed = stage_seed(&cfg, cli_seed);
    let vocab = load_vocab(&cfg)?;
    let from = from.unwrap_or_else(|| cfg.checkpoint_path("pretrain"));
    let ckpt = load_checkpoint(&from)?;
    require_stage(&ckpt, "pretrain", "train-sft")?;

    let dataset_path = cfg.resolve(&cfg.sft.dataset);
    let records = load_sft(&dataset_path)?;
    let records = subsample(records, cfg.sft.max_records, seed, "sft.subsample");
    if records.is_empty() {
        return Err(AppError::Validation("sft dataset is empty".into()));
    }

    let base = ckpt.model.merged()?;
    let mut adapted = attach_lora(
        base,
        &cfg.lora,
        cfg.quantize_base,
        cfg.block_size,
        &RngState::new(seed),
    )
    .map_err(AppError::validation)?;

    let tc = cfg.sft_train_config(seed);
    let metrics = run_sft(&mut adapted, &vocab, &records, &tc).map_err(AppError::runtime)?;

    let mut provenance = ckpt.provenance;
    provenance.push(ProvenanceEntry {
        stage: "sft".into(),
        dataset_digest: dataset_digest(&dataset_path)?,
    });
    let out = cfg.checkpoint_path("sft");
    save_checkpoint(&LoadedModel::Adapted(adapted), &provenance, &out)?;
    write_metrics(&cfg.metrics_path("sft"), &metrics)?;
    println!(
        "sft: {} steps over {} records, final loss {:.4} -> {}",
        metrics.len(),
        records.len(),
        metrics.last().map(|m| m.loss).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Preference optimization: fresh adapters trained against the stage-start
/// snapshot as the frozen reference.
pub fn train_dpo_command(config: &Path, cli_seed: Option<u64>, from: Option<PathBuf>) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let seed = stage_seed(&cfg, cli_seed);
    let vocab = load_vocab(&cfg)?;
    let from = from.unwrap_or_else(|| cfg.checkpoint_path("sft"));
    let ckpt = load_checkpoint(&from)?;
    require_stage(&ckpt, "sft", "train-dpo")?;

    let dataset_path = cfg.resolve(&cfg.dpo.dataset);
    let records = load_preferences(&dataset_path)?;
    let total = records.len();
    let records = filter_preferences(
        records,
        cfg.dpo.min_score.unwrap_or(f32::NEG_INFINITY),
        &cfg.dpo.excluded_sources,
    );
    let kept = records.len();
    let records = subsample(records, cfg.dpo.max_records, seed, "dpo.subsample");
    if records.is_empty() {
        return Err(AppError::Validation(
            "no preference records left after filtering".into(),
        ));
    }

    let merged = ckpt.model.merged()?;
    let mut policy = attach_lora(
        merged,
        &cfg.lora,
        cfg.quantize_base,
        cfg.block_size,
        &RngState::new(seed),
    )
    .map_err(AppError::validation)?;
    // Snapshot of the policy at stage start; stays frozen throughout.
    let reference = policy.frozen_base().clone();

    let tc = cfg.dpo_train_config(seed);
    let dpo = DpoConfig { beta: cfg.dpo.beta };
    let metrics = run_dpo(&mut policy, &reference, &vocab, &records, &tc, &dpo)
        .map_err(AppError::runtime)?;

    let mut provenance = ckpt.provenance;
    provenance.push(ProvenanceEntry {
        stage: "dpo".into(),
        dataset_digest: dataset_digest(&dataset_path)?,
    });
    let out = cfg.checkpoint_path("dpo");
    save_checkpoint(&LoadedModel::Adapted(policy), &provenance, &out)?;
    write_metrics(&cfg.metrics_path("dpo"), &metrics)?;
    println!(
        "dpo: {} steps over {} pairs ({} of {} kept by filters), mean margin {:.4} -> {}",
        metrics.len(),
        records.len(),
        kept,
        total,
        metrics.last().and_then(|m| m.margin).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Language adaptation on the raw target-language corpus; fresh adapters by
/// default, full dense training with `full_weights`.
pub fn adapt_command(config: &Path, cli_seed: Option<u64>, from: Option<PathBuf>) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let seed = stage_seed(&cfg, cli_seed);
    let vocab = load_vocab(&cfg)?;
    let from = from.unwrap_or_else(|| {
        let dpo = cfg.checkpoint_path("dpo");
        if dpo.exists() {
            dpo
        } else {
            cfg.checkpoint_path("sft")
        }
    });
    let ckpt = load_checkpoint(&from)?;
    require_stage(&ckpt, "sft", "adapt")?;

    let dataset_path = cfg.resolve(&cfg.adapt.dataset);
    let docs = load_raw(&dataset_path)?;
    let docs = subsample(docs, cfg.adapt.max_records, seed, "adapt.subsample");
    if docs.len() < 2 {
        return Err(AppError::Validation(
            "adaptation corpus needs at least two documents".into(),
        ));
    }
    let source_holdout = cfg
        .adapt
        .source_holdout
        .as_ref()
        .map(|p| load_raw(&cfg.resolve(p)))
        .transpose()?;

    let merged = ckpt.model.merged()?;
    let tc = cfg.adapt_train_config(seed);
    let (report, model) = if cfg.adapt.full_weights {
        let mut weights = merged;
        let report = run_adaptation(
            &mut weights,
            &vocab,
            &docs,
            source_holdout.as_deref(),
            &tc,
            cfg.adapt.holdout_fraction,
        )
        .map_err(AppError::runtime)?;
        (report, LoadedModel::Dense(weights))
    } else {
        let mut adapted = attach_lora(
            merged,
            &cfg.lora,
            cfg.quantize_base,
            cfg.block_size,
            &RngState::new(seed),
        )
        .map_err(AppError::validation)?;
        let report = run_adaptation(
            &mut adapted,
            &vocab,
            &docs,
            source_holdout.as_deref(),
            &tc,
            cfg.adapt.holdout_fraction,
        )
        .map_err(AppError::runtime)?;
        (report, LoadedModel::Adapted(adapted))
    };

    let mut provenance = ckpt.provenance;
    provenance.push(ProvenanceEntry {
        stage: "adapt".into(),
        dataset_digest: dataset_digest(&dataset_path)?,
    });
    let out = cfg.checkpoint_path("adapt");
    save_checkpoint(&model, &provenance, &out)?;
    write_metrics(&cfg.metrics_path("adapt"), &report.metrics)?;
    let ppl_json = serde_json::json!({
        "target_ppl_before": report.target_ppl_before,
        "target_ppl_after": report.target_ppl_after,
        "source_ppl_before": report.source_ppl_before,
        "source_ppl_after": report.source_ppl_after,
        "holdout_size": report.holdout_size,
    });
    let ppl_path = cfg
        .resolve(&cfg.paths.checkpoint_dir)
        .join("adapt.report.json");
    std::fs::write(
        &ppl_path,
        serde_json::to_string_pretty(&ppl_json).map_err(AppError::runtime)?,
    )
    .map_err(|e| AppError::runtime(format!("{}: {e}", ppl_path.display())))?;
    println!(
        "adapt: target holdout perplexity {:.3} -> {:.3} ({} held-out docs)",
        report.target_ppl_before, report.target_ppl_after, report.holdout_size
    );
    if let (Some(b), Some(a)) = (report.source_ppl_before, report.source_ppl_after) {
        println!("adapt: source holdout perplexity {b:.3} -> {a:.3}");
    }
    println!("adapt: checkpoint -> {}", out.display());
    Ok(())
}
