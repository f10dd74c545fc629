//! Next-token training over formatted sequences: instruction tuning and the
//! raw-corpus stages share this loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::GraphModel;
use crate::numerics::{RngState, Tape};
use crate::templating::{format_alpaca_parts, format_raw, RawDoc, SftRecord};
use crate::tokenizer::Vocabulary;

use super::optim::{adamw_step, LossMaskMode, OptimizerState, TrainConfig};
use super::{StepMetric, TrainableParams};

/// A training example for the next-token objective.
#[derive(Debug, Clone, Copy)]
pub enum SftExample<'a> {
    Instruction(&'a SftRecord),
    Raw(&'a RawDoc),
}

/// Token stream plus the index of the first supervised position.
pub(crate) struct TokenizedExample {
    pub tokens: Vec<u32>,
    pub supervise_from: usize,
}

/// Format and tokenize one example. Over-length instruction sequences lose
/// prompt tokens from the left, never response tokens; a response that
/// cannot fit alongside at least one prompt token is an error. Raw documents
/// truncate from the right.
pub(crate) fn tokenize_example(
    vocab: &Vocabulary,
    example: SftExample<'_>,
    max_seq_len: usize,
) -> Result<TokenizedExample> {
    match example {
        SftExample::Instruction(record) => {
            let (prompt, response) = format_alpaca_parts(record)?;
            let mut prompt_ids = vocab.encode(&prompt, true);
            let response_ids = vocab.encode(&response, true);
            if response_ids.len() + 1 > max_seq_len {
                return Err(Error::SequenceTooLong {
                    len: response_ids.len() + 1,
                    max: max_seq_len,
                });
            }
            let keep = max_seq_len - response_ids.len();
            if prompt_ids.len() > keep {
                prompt_ids.drain(..prompt_ids.len() - keep);
            }
            let supervise_from = prompt_ids.len();
            let mut tokens = prompt_ids;
            tokens.extend_from_slice(&response_ids);
            Ok(TokenizedExample {
                tokens,
                supervise_from,
            })
        }
        SftExample::Raw(doc) => {
            let text = format_raw(doc)?;
            let mut tokens = vocab.encode(&text, true);
            tokens.truncate(max_seq_len);
            if tokens.len() < 2 {
                return Err(Error::InvalidData(
                    "raw document shorter than two tokens".into(),
                ));
            }
            Ok(TokenizedExample {
                tokens,
                supervise_from: 1,
            })
        }
    }
}

/// Inputs, shifted targets and the supervision mask for one example.
pub(crate) fn ce_views(
    ex: &TokenizedExample,
    mode: LossMaskMode,
) -> Result<(Vec<u32>, Vec<u32>, Vec<bool>)> {
    let n = ex.tokens.len();
    if n < 2 {
        return Err(Error::InvalidData("sequence shorter than two tokens".into()));
    }
    let inputs = ex.tokens[..n - 1].to_vec();
    let targets = ex.tokens[1..].to_vec();
    let mask: Vec<bool> = match mode {
        LossMaskMode::FullSequence => vec![true; n - 1],
        LossMaskMode::ResponseOnly => (1..n).map(|pos| pos >= ex.supervise_from).collect(),
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyLoss("no supervised positions".into()));
    }
    Ok((inputs, targets, mask))
}

/// Next-token cross entropy of one formatted example under the model.
pub fn sft_loss<M: GraphModel>(
    model: &M,
    vocab: &Vocabulary,
    example: SftExample<'_>,
    mode: LossMaskMode,
) -> Result<f64> {
    let tokenized = tokenize_example(vocab, example, model.config().max_seq_len)?;
    let (inputs, targets, mask) = ce_views(&tokenized, mode)?;
    let mut tape = Tape::new();
    let build = model.build_forward(&mut tape, &inputs, false, None)?;
    let loss = tape.masked_ce_mean(build.logits, &targets, &mask)?;
    Ok(tape.scalar_value(loss))
}

/// Shared stage loop: shuffled mini-batches of next-token loss, one AdamW
/// step per batch on whatever `model` exposes as trainable.
pub(crate) fn run_next_token_stage<M>(
    model: &mut M,
    vocab: &Vocabulary,
    examples: &[SftExample<'_>],
    cfg: &TrainConfig,
    stage: &'static str,
) -> Result<Vec<StepMetric>>
where
    M: GraphModel + TrainableParams,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidData(format!("{stage}: empty dataset")));
    }
    let mode = cfg.loss_mask_mode;
    let max_len = cfg.max_seq_len.min(model.config().max_seq_len);
    let tokenized: Vec<TokenizedExample> = examples
        .iter()
        .map(|ex| tokenize_example(vocab, *ex, max_len))
        .collect::<Result<_>>()?;

    let rng = RngState::new(cfg.seed);
    let mut dropout_rng = rng.stream(&format!("{stage}.dropout"));
    let mut state = OptimizerState::new();
    let mut metrics = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tokenized.len()).collect();
        order.shuffle(&mut rng.stream(&format!("{stage}.shuffle.{epoch}")));

        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let mut grad_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (inputs, targets, mask) = ce_views(&tokenized[idx], mode)?;
                let mut tape = Tape::new();
                let build =
                    model.build_forward(&mut tape, &inputs, true, Some(&mut dropout_rng))?;
                let loss = tape.masked_ce_mean(build.logits, &targets, &mask)?;
                batch_loss += tape.scalar_value(loss) * inv;
                tape.backward(loss)?;
                for (name, node) in &build.params {
                    if let Some(g) = tape.grad(*node) {
                        let acc = grad_acc
                            .entry(name.clone())
                            .or_insert_with(|| vec![0.0; g.len()]);
                        for (a, &v) in acc.iter_mut().zip(g) {
                            *a += v * inv;
                        }
                    }
                }
            }
            apply_step(model, &mut state, cfg, &grad_acc)?;
            step += 1;
            metrics.push(StepMetric {
                stage: stage.to_string(),
                step,
                loss: batch_loss,
                lr: cfg.learning_rate as f64,
                margin: None,
            });
        }
    }
    Ok(metrics)
}

/// Write one optimizer step back into the model's trainable tensors.
pub(crate) fn apply_step<M: TrainableParams>(
    model: &mut M,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    grad_acc: &BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let mut params = model.trainable_params();
    let grads: Vec<(String, Vec<f32>)> = params
        .iter()
        .map(|(name, p)| {
            let g = grad_acc
                .get(name)
                .map(|g| g.iter().map(|&v| v as f32).collect())
                .unwrap_or_else(|| vec![0.0; p.len()]);
            (name.clone(), g)
        })
        .collect();
    adamw_step(state, cfg, &mut params, &grads)?;
    model.write_back(&params)
}

/// Instruction-tuning stage: adapter-only training over instruction records.
pub fn run_sft<M>(
    model: &mut M,
    vocab: &Vocabulary,
    dataset: &[SftRecord],
    cfg: &TrainConfig,
) -> Result<Vec<StepMetric>>
where
    M: GraphModel + TrainableParams,
{
    let examples: Vec<SftExample> = dataset.iter().map(SftExample::Instruction).collect();
    run_next_token_stage(model, vocab, &examples, cfg, "sft")
}
