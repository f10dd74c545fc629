//! `merge`: fold adapters into dense weights and write a plain checkpoint.

use std::path::Path;

use crate::checkpoint::{load_checkpoint, save_checkpoint, LoadedModel};
use crate::error::AppResult;

pub fn merge_command(checkpoint: &Path, out: &Path) -> AppResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let merged = ckpt.model.merged()?;
    save_checkpoint(&LoadedModel::Dense(merged), &ckpt.provenance, out)?;
    println!("merged {} -> {}", checkpoint.display(), out.display());
    Ok(())
}
