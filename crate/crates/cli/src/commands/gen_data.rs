//! `gen-data`: write the synthetic fixture tree (corpora, datasets, tasks,
//! config) so the whole pipeline can run out of the box.

use std::path::Path;

use crate::error::AppResult;
use crate::synth::write_fixture_tree;

pub fn gen_data_command(out_dir: &Path, seed: u64) -> AppResult<()> {
    let config = write_fixture_tree(out_dir, seed)?;
    println!("fixtures written under {}", out_dir.display());
    println!("config -> {}", config.display());
    Ok(())
}
