//! Benchmark task types and the scoring loops.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate, loglikelihood, GraphModel, SamplingParams};
use crate::tokenizer::Vocabulary;

use super::extract::{extract_flexible, extract_strict, normalize_numeric};

/// Scoring interface the harness needs from a model. Implemented by the
/// real tokenized transformer and by the rigged fixture backend.
pub trait EvalModel {
    /// Summed log-probability of `continuation` given `context`.
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64>;

    /// Deterministic text completion of `prompt` (greedy params recommended).
    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<String>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McItem {
    pub context: String,
    pub choices: Vec<String>,
    pub gold: usize,
}

/// Multiple-choice task: pick the likeliest ending.
#[derive(Debug, Clone)]
pub struct McTask {
    pub name: String,
    pub items: Vec<McItem>,
}

impl McTask {
    pub fn validate(&self) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            if item.choices.len() < 2 {
                return Err(Error::InvalidData(format!(
                    "{}: item {i} has {} choices, need at least 2",
                    self.name,
                    item.choices.len()
                )));
            }
            if item.gold >= item.choices.len() {
                return Err(Error::InvalidData(format!(
                    "{}: item {i} gold index {} out of range",
                    self.name, item.gold
                )));
            }
            if item.choices.iter().any(|c| c.is_empty()) {
                return Err(Error::InvalidData(format!(
                    "{}: item {i} has an empty choice",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    Strict,
    Flexible,
}

impl ExtractionMode {
    pub fn metric_name(self) -> &'static str {
        match self {
            ExtractionMode::Strict => "strict-match",
            ExtractionMode::Flexible => "flexible-extract",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenItem {
    pub prompt: String,
    pub answer: String,
}

/// Generative task: produce text, extract an answer, compare to gold.
#[derive(Debug, Clone)]
pub struct GenTask {
    pub name: String,
    pub items: Vec<GenItem>,
    pub mode: ExtractionMode,
}

impl GenTask {
    pub fn validate(&self) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            if item.answer.is_empty() {
                return Err(Error::InvalidData(format!(
                    "{}: item {i} has an empty gold answer",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Multiple-choice outcome: raw-argmax accuracy and byte-length-normalized
/// accuracy, plus the count of items that failed to score (context
/// overflow); failed items count as incorrect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McScores {
    pub acc: f64,
    pub acc_norm: f64,
    pub overflow_items: usize,
}

/// Pick the winner by strict argmax; ties go to the lowest index.
fn argmax_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Score every choice of every item by loglikelihood. `acc` takes the raw
/// summed log-probability argmax; `acc_norm` divides each score by the
/// UTF-8 byte length of its choice first.
pub fn eval_multiple_choice<M: EvalModel>(model: &M, task: &McTask) -> Result<McScores> {
    task.validate()?;
    if task.items.is_empty() {
        return Err(Error::InvalidData(format!("{}: no items", task.name)));
    }
    let mut correct_raw = 0usize;
    let mut correct_norm = 0usize;
    let mut overflow = 0usize;
    for item in &task.items {
        let mut raw = Vec::with_capacity(item.choices.len());
        let mut ok = true;
        for choice in &item.choices {
            match model.loglikelihood(&item.context, choice) {
                Ok(score) => raw.push(score),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            overflow += 1;
            continue;
        }
        let normed: Vec<f64> = raw
            .iter()
            .zip(&item.choices)
            .map(|(&s, c)| s / c.len() as f64)
            .collect();
        if argmax_index(&raw) == item.gold {
            correct_raw += 1;
        }
        if argmax_index(&normed) == item.gold {
            correct_norm += 1;
        }
    }
    let n = task.items.len() as f64;
    Ok(McScores {
        acc: correct_raw as f64 / n,
        acc_norm: correct_norm as f64 / n,
        overflow_items: overflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenScore {
    pub score: f64,
    pub overflow_items: usize,
}

/// Generate per item, extract per the task mode, and exact-match against
/// the gold answer after numeric normalization.
pub fn eval_generative<M: EvalModel>(
    model: &M,
    task: &GenTask,
    params: &SamplingParams,
) -> Result<GenScore> {
    task.validate()?;
    if task.items.is_empty() {
        return Err(Error::InvalidData(format!("{}: no items", task.name)));
    }
    let mut correct = 0usize;
    let mut overflow = 0usize;
    for item in &task.items {
        let text = match model.generate(&item.prompt, params) {
            Ok(t) => t,
            Err(_) => {
                overflow += 1;
                continue;
            }
        };
        let extracted = match task.mode {
            ExtractionMode::Strict => extract_strict(&text),
            ExtractionMode::Flexible => extract_flexible(&text),
        };
        if let Some(ans) = extracted {
            if normalize_numeric(&ans) == normalize_numeric(&item.answer) {
                correct += 1;
            }
        }
    }
    Ok(GenScore {
        score: correct as f64 / task.items.len() as f64,
        overflow_items: overflow,
    })
}

/// Deterministic fixture backend: total lookup tables from prompts to
/// log-probabilities and generations.
#[derive(Debug, Clone, Default)]
pub struct RiggedModel {
    loglikelihoods: BTreeMap<(String, String), f64>,
    generations: BTreeMap<String, String>,
}

impl RiggedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_loglikelihood(&mut self, context: &str, continuation: &str, logprob: f64) {
        self.loglikelihoods
            .insert((context.to_string(), continuation.to_string()), logprob);
    }

    pub fn set_generation(&mut self, prompt: &str, text: &str) {
        self.generations.insert(prompt.to_string(), text.to_string());
    }
}

impl EvalModel for RiggedModel {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64> {
        self.loglikelihoods
            .get(&(context.to_string(), continuation.to_string()))
            .copied()
            .ok_or_else(|| {
                Error::InvalidData(format!("no fixture for ({context:?}, {continuation:?})"))
            })
    }

    fn generate(&self, prompt: &str, _params: &SamplingParams) -> Result<String> {
        self.generations
            .get(prompt)
            .cloned()
            .ok_or_else(|| Error::InvalidData(format!("no generation fixture for {prompt:?}")))
    }
}

/// The real model behind the [`EvalModel`] interface: text is tokenized
/// with specials parsed, continuations score via the model's
/// loglikelihood, and generation stops at `<|eot_id|>`.
pub struct TokenizedLm<'a, M: GraphModel> {
    pub model: &'a M,
    pub vocab: &'a Vocabulary,
}

impl<'a, M: GraphModel> TokenizedLm<'a, M> {
    pub fn new(model: &'a M, vocab: &'a Vocabulary) -> Self {
        Self { model, vocab }
    }
}

impl<M: GraphModel> EvalModel for TokenizedLm<'_, M> {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64> {
        let ctx = self.vocab.encode(context, true);
        let cont = self.vocab.encode(continuation, true);
        Ok(loglikelihood(self.model, &ctx, &cont)?.0)
    }

    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<String> {
        let ids = self.vocab.encode(prompt, true);
        let mut params = params.clone();
        if !params.stop_tokens.contains(&self.vocab.eot_id()) {
            params.stop_tokens.push(self.vocab.eot_id());
        }
        let out = generate(self.model, &ids, &params)?;
        self.vocab.decode(&out)
    }
}
