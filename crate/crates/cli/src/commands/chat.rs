//! `chat`: interactive read-generate-print loop over a checkpoint.

use std::io::{BufRead, Write};
use std::path::Path;

use desklm_core::model::{generate, GraphModel, ModelWeights, SamplingParams};
use desklm_core::templating::{format_chat, ChatMessage, Role};
use desklm_core::tokenizer::Vocabulary;

use crate::checkpoint::load_checkpoint;
use crate::config::AppConfig;
use crate::error::{AppError, AppResult};

use super::load_vocab;

/// Default assistant persona, in the adapted model's target language.
pub const DEFAULT_SYSTEM_PROMPT: &str = "Sei un an assistente AI per la lingua Italiana di nome LLaMAntino-3 ANITA (Advanced Natural-based interaction for the ITALian language). Rispondi nella lingua usata per la domanda in modo chiaro, semplice ed esaustivo.";

pub struct ChatOptions {
    pub system_prompt: String,
    pub params: SamplingParams,
}

impl Default for ChatOptions {
    fn default() -> Self {
        Self {
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            params: SamplingParams {
                temperature: 0.0,
                top_p: 1.0,
                max_new_tokens: 128,
                stop_tokens: Vec::new(),
                seed: 0,
            },
        }
    }
}

/// One turn: render history with the generation prompt, drop oldest
/// exchanges if the context is full, generate until `<|eot_id|>`.
fn respond<M: GraphModel>(
    model: &M,
    vocab: &Vocabulary,
    history: &mut Vec<ChatMessage>,
    params: &SamplingParams,
    out: &mut impl Write,
) -> AppResult<String> {
    let max_len = model.config().max_seq_len;
    loop {
        let rendered = format_chat(history, true).map_err(AppError::runtime)?;
        let ids = vocab.encode(&rendered, true);
        if ids.len() + 1 < max_len {
            let mut params = params.clone();
            if !params.stop_tokens.contains(&vocab.eot_id()) {
                params.stop_tokens.push(vocab.eot_id());
            }
            let new_tokens = generate(model, &ids, &params).map_err(AppError::runtime)?;
            return vocab.decode(&new_tokens).map_err(AppError::runtime);
        }
        // Context full: drop the oldest user/assistant exchange, keep the
        // system message.
        let first_turn = history
            .iter()
            .position(|m| m.role != Role::System)
            .unwrap_or(history.len());
        let drop_n = if history.get(first_turn + 1).is_some_and(|m| m.role == Role::Assistant) {
            2
        } else {
            1
        };
        if first_turn + drop_n > history.len() || history.len() <= drop_n {
            return Err(AppError::Runtime(
                "prompt alone exceeds the model context".into(),
            ));
        }
        history.drain(first_turn..first_turn + drop_n);
        writeln!(out, "(context full; dropped the oldest turn)")
            .map_err(AppError::runtime)?;
    }
}

/// Drive the loop over arbitrary reader/writer pairs (tests feed scripted
/// input). `/reset` clears history, `/quit` exits, empty lines re-prompt.
pub fn chat_repl<M: GraphModel>(
    model: &M,
    vocab: &Vocabulary,
    options: &ChatOptions,
    input: impl BufRead,
    mut output: impl Write,
) -> AppResult<()> {
    let system = ChatMessage::new(Role::System, options.system_prompt.clone());
    let mut history = vec![system.clone()];
    let write_prompt = |out: &mut dyn Write| -> AppResult<()> {
        write!(out, "you> ").map_err(AppError::runtime)?;
        out.flush().map_err(AppError::runtime)
    };
    write_prompt(&mut output)?;
    for line in input.lines() {
        let line = line.map_err(AppError::runtime)?;
        let line = line.trim();
        match line {
            "" => {}
            "/quit" => {
                writeln!(output, "bye").map_err(AppError::runtime)?;
                return Ok(());
            }
            "/reset" => {
                history = vec![system.clone()];
                writeln!(output, "(history cleared)").map_err(AppError::runtime)?;
            }
            _ => {
                history.push(ChatMessage::new(Role::User, line));
                let reply = respond(model, vocab, &mut history, &options.params, &mut output)?;
                writeln!(output, "assistant> {reply}").map_err(AppError::runtime)?;
                history.push(ChatMessage::new(Role::Assistant, reply));
            }
        }
        write_prompt(&mut output)?;
    }
    writeln!(output).map_err(AppError::runtime)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn chat_command(
    config: &Path,
    checkpoint: &Path,
    system: Option<String>,
    temperature: f32,
    top_p: f32,
    max_new_tokens: usize,
    cli_seed: Option<u64>,
) -> AppResult<()> {
    let cfg = AppConfig::load(config)?;
    let vocab = load_vocab(&cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let weights: ModelWeights = ckpt.model.merged()?;
    let options = ChatOptions {
        system_prompt: system.unwrap_or_else(|| DEFAULT_SYSTEM_PROMPT.to_string()),
        params: SamplingParams {
            temperature,
            top_p,
            max_new_tokens,
            stop_tokens: Vec::new(),
            seed: cli_seed.unwrap_or(cfg.seed),
        },
    };
    options.params.validate().map_err(AppError::validation)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    chat_repl(&weights, &vocab, &options, stdin.lock(), stdout.lock())
}
