//! JSON-lines dataset ingestion with per-line error reporting.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use desklm_core::evaluation::{ExtractionMode, GenItem, GenTask, McItem, McTask};
use desklm_core::templating::{RawDoc, SftRecord};
use desklm_core::training::PreferenceRecord;

use crate::error::{AppError, AppResult};

fn parse_lines<T: DeserializeOwned>(path: &Path) -> AppResult<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| {
            AppError::validation(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(record);
    }
    if out.is_empty() {
        eprintln!("warning: {} contained no records", path.display());
    }
    Ok(out)
}

/// Instruction records; role markers are stripped at ingest and the
/// resulting records validated.
pub fn load_sft(path: &Path) -> AppResult<Vec<SftRecord>> {
    let records: Vec<SftRecord> = parse_lines(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let r = r.normalized();
        if r.instruction.is_empty() || r.output.is_empty() {
            return Err(AppError::Validation(format!(
                "{}:{}: record needs non-empty instruction and output",
                path.display(),
                i + 1
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_preferences(path: &Path) -> AppResult<Vec<PreferenceRecord>> {
    let records: Vec<PreferenceRecord> = parse_lines(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| {
            AppError::validation(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
    }
    Ok(records)
}

pub fn load_raw(path: &Path) -> AppResult<Vec<RawDoc>> {
    let docs: Vec<RawDoc> = parse_lines(path)?;
    for (i, d) in docs.iter().enumerate() {
        if d.text.trim().is_empty() {
            return Err(AppError::Validation(format!(
                "{}:{}: raw document text is empty",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(docs)
}

#[derive(Deserialize)]
struct ProbeLine {
    #[serde(default)]
    context: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
}

/// A task file: either multiple-choice or generative, decided by its item
/// schema. Generative tasks are evaluated under both extraction modes.
pub enum TaskFile {
    Mc(McTask),
    Gen { name: String, items: Vec<GenItem> },
}

/// Load one `.jsonl` task file. Items with a `context` field parse as
/// multiple-choice ({context, choices, gold}); items with a `prompt` field
/// as generative ({prompt, answer}).
pub fn load_task(path: &Path) -> AppResult<TaskFile> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("task")
        .to_string();
    let probe: Vec<ProbeLine> = parse_lines(path)?;
    let first = probe.first().ok_or_else(|| {
        AppError::Validation(format!("{}: task file has no items", path.display()))
    })?;
    if first.context.is_some() {
        let items: Vec<McItem> = parse_lines(path)?;
        let task = McTask { name, items };
        task.validate()
            .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
        Ok(TaskFile::Mc(task))
    } else if first.prompt.is_some() {
        let items: Vec<GenItem> = parse_lines(path)?;
        let probe_task = GenTask {
            name: name.clone(),
            items: items.clone(),
            mode: ExtractionMode::Strict,
        };
        probe_task
            .validate()
            .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
        Ok(TaskFile::Gen { name, items })
    } else {
        Err(AppError::Validation(format!(
            "{}: items carry neither a context nor a prompt field",
            path.display()
        )))
    }
}

/// Every `.jsonl` under `dir`, sorted by name.
pub fn load_task_dir(dir: &Path) -> AppResult<Vec<TaskFile>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| AppError::validation(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Validation(format!(
            "{}: no .jsonl task files",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_task(p)).collect()
}
