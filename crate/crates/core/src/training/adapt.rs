//! Raw-corpus stages: the pretraining warm-up and target-language
//! adaptation, both full-sequence next-token training over wrapped
//! documents.

use crate::error::{Error, Result};
use crate::model::GraphModel;
use crate::numerics::{RngState, Tape};
use crate::templating::RawDoc;
use crate::tokenizer::Vocabulary;

use super::optim::{LossMaskMode, TrainConfig};
use super::sft::{ce_views, run_next_token_stage, tokenize_example, SftExample};
use super::{StepMetric, TrainableParams};

/// Perplexity and loss log of one adaptation run.
#[derive(Debug, Clone)]
pub struct AdaptationReport {
    pub metrics: Vec<StepMetric>,
    pub target_ppl_before: f64,
    pub target_ppl_after: f64,
    /// Perplexity on a source-language holdout, when one was supplied.
    /// Measured for regression visibility; no threshold is asserted.
    pub source_ppl_before: Option<f64>,
    pub source_ppl_after: Option<f64>,
    pub holdout_size: usize,
}

/// exp of the token-weighted mean next-token negative log-likelihood over
/// wrapped documents.
pub fn perplexity<M: GraphModel>(model: &M, vocab: &Vocabulary, docs: &[RawDoc]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::InvalidData("perplexity over empty document set".into()));
    }
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for doc in docs {
        let ex = tokenize_example(vocab, SftExample::Raw(doc), model.config().max_seq_len)?;
        let (inputs, targets, mask) = ce_views(&ex, LossMaskMode::FullSequence)?;
        let mut tape = Tape::new();
        let build = model.build_forward(&mut tape, &inputs, false, None)?;
        let loss = tape.masked_ce_mean(build.logits, &targets, &mask)?;
        let count = mask.iter().filter(|&&m| m).count();
        total_nll += tape.scalar_value(loss) * count as f64;
        total_tokens += count;
    }
    Ok((total_nll / total_tokens as f64).exp())
}

/// Pretraining warm-up: full-sequence training on raw documents. At desk
/// scale there is no pretrained base to start from, so this stands in for
/// one before the instruction-tuning stage.
pub fn run_pretrain<M>(
    model: &mut M,
    vocab: &Vocabulary,
    corpus: &[RawDoc],
    cfg: &TrainConfig,
) -> Result<Vec<StepMetric>>
where
    M: GraphModel + TrainableParams,
{
    let cfg = TrainConfig {
        loss_mask_mode: LossMaskMode::FullSequence,
        ..cfg.clone()
    };
    let examples: Vec<SftExample> = corpus.iter().map(SftExample::Raw).collect();
    run_next_token_stage(model, vocab, &examples, &cfg, "pretrain")
}

/// Language adaptation: full-sequence training on the target-language
/// corpus, with held-out perplexity measured before and after. A fraction
/// of the corpus (deterministically chosen from the stage seed) is held
/// out; `source_holdout` docs are scored alongside when given.
pub fn run_adaptation<M>(
    model: &mut M,
    vocab: &Vocabulary,
    corpus: &[RawDoc],
    source_holdout: Option<&[RawDoc]>,
    cfg: &TrainConfig,
    holdout_fraction: f32,
) -> Result<AdaptationReport>
where
    M: GraphModel + TrainableParams,
{
    if corpus.len() < 2 {
        return Err(Error::InvalidData(
            "adaptation corpus needs at least two documents (train + holdout)".into(),
        ));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidConfig(format!(
            "holdout_fraction {holdout_fraction} must lie in [0, 1)"
        )));
    }
    let n_holdout = ((corpus.len() as f32 * holdout_fraction).round() as usize)
        .clamp(1, corpus.len() - 1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut RngState::new(cfg.seed).stream("adapt.split"));
    let holdout: Vec<RawDoc> = order[..n_holdout].iter().map(|&i| corpus[i].clone()).collect();
    let train: Vec<RawDoc> = order[n_holdout..].iter().map(|&i| corpus[i].clone()).collect();

    let target_ppl_before = perplexity(model, vocab, &holdout)?;
    let source_ppl_before = source_holdout
        .map(|docs| perplexity(model, vocab, docs))
        .transpose()?;

    let cfg = TrainConfig {
        loss_mask_mode: LossMaskMode::FullSequence,
        ..cfg.clone()
    };
    let examples: Vec<SftExample> = train.iter().map(SftExample::Raw).collect();
    let metrics = run_next_token_stage(model, vocab, &examples, &cfg, "adapt")?;

    let target_ppl_after = perplexity(model, vocab, &holdout)?;
    let source_ppl_after = source_holdout
        .map(|docs| perplexity(model, vocab, docs))
        .transpose()?;

    Ok(AdaptationReport {
        metrics,
        target_ppl_before,
        target_ppl_after,
        source_ppl_before,
        source_ppl_after,
        holdout_size: n_holdout,
    })
}
