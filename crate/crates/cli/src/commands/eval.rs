//! `eval`: score a checkpoint over a directory of task files and write the
//! report as JSON plus a rendered table.

use std::fs;
use std::path::Path;

use desklm_core::evaluation::{
    eval_generative, eval_multiple_choice, render_report, EvalReport, ExtractionMode, GenTask,
    ReportRow, TokenizedLm,
};
use desklm_core::model::SamplingParams;

use crate::checkpoint::load_checkpoint;
use crate::config::AppConfig;
use crate::data::{load_task_dir, TaskFile};
use crate::error::{AppError, AppResult};

use super::load_vocab;

pub fn eval_command(
    config: &Path,
    tasks_dir: &Path,
    checkpoint: &Path,
    out: Option<&Path>,
    model_name: Option<String>,
    cli_seed: Option<u64>,
) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let vocab = load_vocab(&cfg)?;
    let tasks = load_task_dir(tasks_dir)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let weights = ckpt.model.merged()?;
    let lm = TokenizedLm::new(&weights, &vocab);

    let name = model_name.unwrap_or_else(|| {
        checkpoint
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string()
    });
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => cfg
            .resolve(&cfg.paths.report_dir)
            .join(format!("{name}.json")),
    };
    let out = out.as_path();
    let params = SamplingParams {
        temperature: 0.0,
        top_p: 1.0,
        max_new_tokens: 24,
        stop_tokens: Vec::new(),
        seed: cli_seed.unwrap_or(cfg.seed),
    };

    let mut rows = Vec::new();
    let mut overflow = 0usize;
    for task in &tasks {
        match task {
            TaskFile::Mc(mc) => {
                let scores = eval_multiple_choice(&lm, mc).map_err(AppError::runtime)?;
                overflow += scores.overflow_items;
                rows.push(ReportRow {
                    task: mc.name.clone(),
                    metric: "acc".into(),
                    score: scores.acc,
                });
                rows.push(ReportRow {
                    task: mc.name.clone(),
                    metric: "acc_norm".into(),
                    score: scores.acc_norm,
                });
            }
            TaskFile::Gen { name, items } => {
                for mode in [ExtractionMode::Strict, ExtractionMode::Flexible] {
                    let task = GenTask {
                        name: name.clone(),
                        items: items.clone(),
                        mode,
                    };
                    let score = eval_generative(&lm, &task, &params).map_err(AppError::runtime)?;
                    overflow += score.overflow_items;
                    rows.push(ReportRow {
                        task: name.clone(),
                        metric: mode.metric_name().into(),
                        score: score.score,
                    });
                }
            }
        }
    }

    let report = EvalReport::new(name, rows, overflow).map_err(AppError::runtime)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(
        out,
        serde_json::to_string_pretty(&report).map_err(AppError::runtime)?,
    )
    .map_err(|e| AppError::runtime(format!("{}: {e}", out.display())))?;

    print!("{}", render_report(std::slice::from_ref(&report)).map_err(AppError::runtime)?);
    println!("report -> {}", out.display());
    Ok(())
}
