//! Synthetic desk-scale corpora: a source-language toy world, a
//! target-language twin, instruction pairs over both, preference pairs, and
//! small benchmark tasks. Everything is a pure function of the seed.

use std::fs;
use std::path::Path;

use rand::Rng;

use desklm_core::numerics::RngState;
use desklm_core::templating::{format_alpaca_parts, RawDoc, SftRecord};
use desklm_core::training::{PreferencePrompt, PreferenceRecord};

use crate::error::{AppError, AppResult};

pub const SOURCE_WORDS: [&str; 16] = [
    "stone", "river", "cloud", "bread", "night", "light", "horse", "apple", "glass", "field",
    "house", "stream", "mount", "berry", "west", "north",
];

pub const TARGET_WORDS: [&str; 16] = [
    "sasso", "fiume", "nube", "pane", "notte", "luce", "cavallo", "mela", "vetro", "campo",
    "casa", "ruscello", "monte", "bacca", "ovest", "nord",
];

const SOURCE_VERBS: [&str; 6] = ["sees", "holds", "finds", "keeps", "wants", "leaves"];
const TARGET_VERBS: [&str; 6] = ["vede", "tiene", "trova", "custodisce", "vuole", "lascia"];

pub const SYSTEM_LINE: &str = "You are a careful assistant.";

fn echo_record(word: &str, via_input: bool) -> SftRecord {
    if via_input {
        SftRecord {
            system: SYSTEM_LINE.into(),
            instruction: "Repeat the word.".into(),
            input: word.into(),
            output: word.into(),
        }
    } else {
        SftRecord {
            system: SYSTEM_LINE.into(),
            instruction: format!("Repeat the word: {word}"),
            input: String::new(),
            output: word.into(),
        }
    }
}

/// Source-language documents: simple subject-verb sentences plus
/// instruction-shaped text so the template scaffolding is in-distribution
/// for the warm-up.
pub fn source_corpus(seed: u64, n_docs: usize) -> Vec<RawDoc> {
    let mut rng = RngState::new(seed).stream("synth.source");
    (0..n_docs)
        .map(|i| {
            let a = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            let b = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            let v = SOURCE_VERBS[rng.gen_range(0..SOURCE_VERBS.len())];
            let text = if i % 2 == 0 {
                format!("the {a} {v} the {b} each day")
            } else {
                let w = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
                format!(
                    "{SYSTEM_LINE}\n\n### Instruction:\nRepeat the word: {w}\n\n### Response:\n{w}"
                )
            };
            RawDoc {
                text,
                language: "en".into(),
            }
        })
        .collect()
}

/// Target-language documents mirroring the source grammar.
pub fn target_corpus(seed: u64, n_docs: usize) -> Vec<RawDoc> {
    let mut rng = RngState::new(seed).stream("synth.target");
    (0..n_docs)
        .map(|_| {
            let a = TARGET_WORDS[rng.gen_range(0..TARGET_WORDS.len())];
            let b = TARGET_WORDS[rng.gen_range(0..TARGET_WORDS.len())];
            let v = TARGET_VERBS[rng.gen_range(0..TARGET_VERBS.len())];
            RawDoc {
                text: format!("il {a} {v} il {b} ogni giorno"),
                language: "it".into(),
            }
        })
        .collect()
}

/// Echo-style instruction records over the source vocabulary.
pub fn sft_records(seed: u64, n: usize) -> Vec<SftRecord> {
    let mut rng = RngState::new(seed).stream("synth.sft");
    (0..n)
        .map(|i| {
            let w = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            echo_record(w, i % 2 == 1)
        })
        .collect()
}

/// Preference pairs: the chosen completion echoes the instructed word, the
/// rejected one echoes a different word. A slice of records carries the
/// excluded source tag and some carry low scores, so filtering has work to
/// do.
pub fn preference_records(seed: u64, n: usize) -> Vec<PreferenceRecord> {
    let mut rng = RngState::new(seed).stream("synth.prefs");
    (0..n)
        .map(|i| {
            let good = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            let mut bad = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            while bad == good {
                bad = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            }
            let record = echo_record(good, false);
            let (prompt, _) = format_alpaca_parts(&record).expect("valid record");
            let (source, score) = match i % 8 {
                0 => ("toxic-dpo-v0.2".to_string(), Some(10.0)),
                1 => ("toy-mixed".to_string(), Some(rng.gen_range(1.0..5.0))),
                2 => ("toy-unscored".to_string(), None),
                _ => ("toy-clean".to_string(), Some(rng.gen_range(8.0..10.0))),
            };
            PreferenceRecord {
                prompt: PreferencePrompt::Text(prompt),
                chosen: good.to_string(),
                rejected: bad.to_string(),
                source,
                score,
            }
        })
        .collect()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> AppResult<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(AppError::runtime)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))
}

/// Write the full fixture set (corpora, datasets, tasks, config) under
/// `dir`. Returns the config path.
pub fn write_fixture_tree(dir: &Path, seed: u64) -> AppResult<std::path::PathBuf> {
    fs::create_dir_all(dir.join("tasks"))
        .map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    fs::create_dir_all(dir.join("checkpoints"))
        .map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    fs::create_dir_all(dir.join("reports"))
        .map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;

    write_jsonl(&dir.join("raw_source.jsonl"), &source_corpus(seed, 192))?;
    write_jsonl(&dir.join("raw_target.jsonl"), &target_corpus(seed, 160))?;
    write_jsonl(&dir.join("sft.jsonl"), &sft_records(seed, 32))?;
    write_jsonl(&dir.join("prefs.jsonl"), &preference_records(seed, 48))?;

    // Multiple-choice probe: which word completes the sentence.
    let mut rng = RngState::new(seed).stream("synth.tasks");
    let mc: Vec<serde_json::Value> = (0..12)
        .map(|_| {
            let w = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            let mut alt = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            while alt == w {
                alt = SOURCE_WORDS[rng.gen_range(0..SOURCE_WORDS.len())];
            }
            let mut choices = vec![format!(" {w}"), format!(" {alt}")];
            let gold = if rng.gen_bool(0.5) {
                0
            } else {
                choices.swap(0, 1);
                1
            };
            serde_json::json!({
                "context": format!("the {w} sees the {w} each day. the next word is:"),
                "choices": choices,
                "gold": gold,
            })
        })
        .collect();
    write_jsonl(&dir.join("tasks").join("echo_choice.jsonl"), &mc)?;

    let gen: Vec<serde_json::Value> = (0..6)
        .map(|i| {
            serde_json::json!({
                "prompt": format!("Repeat the word: {}", SOURCE_WORDS[i]),
                "answer": SOURCE_WORDS[i],
            })
        })
        .collect();
    write_jsonl(&dir.join("tasks").join("echo_gen.jsonl"), &gen)?;

    let config = serde_json::json!({
        "seed": seed,
        "model": {
            "n_layers": 2,
            "d_model": 64,
            "n_heads": 4,
            "d_ff": 128,
            "vocab_size": 384,
            "max_seq_len": 256,
            "rope_theta": 10000.0,
            "norm_eps": 1e-5
        },
        "lora": {
            "rank": 8,
            "alpha": 16.0,
            "dropout": 0.0,
            "targets": ["wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down", "lm_head"]
        },
        "quantize_base": true,
        "block_size": 64,
        "paths": {
            "vocab": "vocab.json",
            "checkpoint_dir": "checkpoints",
            "report_dir": "reports"
        },
        "tokenizer": {
            "vocab_size": 384,
            "corpus": ["raw_source.jsonl", "raw_target.jsonl"]
        },
        "pretrain": {"dataset": "raw_source.jsonl"},
        "sft": {"dataset": "sft.jsonl"},
        "dpo": {
            "dataset": "prefs.jsonl",
            "min_score": 5.0,
            "excluded_sources": ["toxic-dpo-v0.2"]
        },
        "adapt": {
            "dataset": "raw_target.jsonl",
            "source_holdout": "raw_source.jsonl",
            "holdout_fraction": 0.1
        }
    });
    let config_path = dir.join("config.json");
    fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).map_err(AppError::runtime)?,
    )
    .map_err(|e| AppError::runtime(format!("{}: {e}", config_path.display())))?;
    Ok(config_path)
}
