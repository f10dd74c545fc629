//! `report`: render a comparison table from saved per-model report files.

use std::fs;
use std::path::{Path, PathBuf};

use desklm_core::evaluation::{render_report, EvalReport};

use crate::error::{AppError, AppResult};

pub fn report_command(inputs: &[PathBuf], out: Option<&Path>) -> AppResult<()> {
    if inputs.is_empty() {
        return Err(AppError::Validation("no report files given".into()));
    }
    let mut reports = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
        reports.push(report);
    }
    let table = render_report(&reports).map_err(AppError::validation)?;
    print!("{table}");
    if let Some(out) = out {
        fs::write(out, &table)
            .map_err(|e| AppError::runtime(format!("{}: {e}", out.display())))?;
        println!("table -> {}", out.display());
    }
    Ok(())
}
