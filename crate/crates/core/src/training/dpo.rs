//! Preference optimization against a frozen reference policy.
//!
//! Each record scores a chosen and a rejected completion under the training
//! policy and the reference snapshot; the loss pushes the implicit reward
//! margin Δ = (policy-ref gap on chosen) − (policy-ref gap on rejected)
//! through -log sigmoid(βΔ).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapters::AdaptedModel;
use crate::error::{Error, Result};
use crate::model::{loglikelihood, GraphModel, ModelWeights};
use crate::numerics::{kernels, RngState, Tape};
use crate::templating::{format_chat, ChatMessage};
use crate::tokenizer::Vocabulary;

use super::optim::{OptimizerState, TrainConfig};
use super::sft::apply_step;
use super::StepMetric;

/// Prompt side of a preference pair: raw text or a chat transcript rendered
/// with the generation prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PreferencePrompt {
    Text(String),
    Chat(Vec<ChatMessage>),
}

/// One preference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt: PreferencePrompt,
    pub chosen: String,
    pub rejected: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub score: Option<f32>,
}

impl PreferenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return Err(Error::InvalidData(
                "preference record has identical chosen and rejected".into(),
            ));
        }
        match &self.prompt {
            PreferencePrompt::Text(t) if t.is_empty() => {
                Err(Error::InvalidData("preference prompt is empty".into()))
            }
            PreferencePrompt::Chat(msgs) if msgs.is_empty() => {
                Err(Error::InvalidData("preference chat prompt is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// The prompt string completions are scored behind.
    pub fn render_prompt(&self) -> Result<String> {
        match &self.prompt {
            PreferencePrompt::Text(t) => Ok(t.clone()),
            PreferencePrompt::Chat(msgs) => format_chat(msgs, true),
        }
    }
}

/// Summed completion log-probabilities under both policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceLogps {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PreferenceLogps {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.policy_chosen,
            self.policy_rejected,
            self.ref_chosen,
            self.ref_rejected,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("preference log-probability".into()));
        }
        Ok(())
    }

    pub fn margin(&self) -> f64 {
        (self.policy_chosen - self.ref_chosen) - (self.policy_rejected - self.ref_rejected)
    }
}

/// Preference-stage temperature. β = 0 degenerates the loss to ln 2 and is
/// only useful in tests; training requires β > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f32,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: 0.1 }
    }
}

/// -log sigmoid(β·Δ) plus the margin Δ itself (for logging).
pub fn dpo_loss(lp: &PreferenceLogps, beta: f32) -> (f64, f64) {
    let margin = lp.margin();
    let loss = kernels::softplus(-(beta as f64) * margin);
    (loss, margin)
}

/// Drop records scored below `min_score` (unscored records pass) or tagged
/// with an excluded source.
pub fn filter_preferences(
    records: Vec<PreferenceRecord>,
    min_score: f32,
    excluded_sources: &[String],
) -> Vec<PreferenceRecord> {
    records
        .into_iter()
        .filter(|r| r.score.is_none_or(|s| s >= min_score))
        .filter(|r| !excluded_sources.iter().any(|e| e == &r.source))
        .collect()
}

struct TokenizedPair {
    prompt: Vec<u32>,
    chosen: Vec<u32>,
    rejected: Vec<u32>,
    ref_chosen: f64,
    ref_rejected: f64,
}

fn tokenize_pair(
    vocab: &Vocabulary,
    record: &PreferenceRecord,
    max_seq_len: usize,
) -> Result<(Vec<u32>, Vec<u32>, Vec<u32>)> {
    record.validate()?;
    let prompt_text = record.render_prompt()?;
    let mut prompt = vocab.encode(&prompt_text, true);
    let completion = |text: &str| -> Vec<u32> {
        let mut ids = vocab.encode(text, true);
        ids.push(vocab.eot_id());
        ids
    };
    let chosen = completion(&record.chosen);
    let rejected = completion(&record.rejected);
    let longest = chosen.len().max(rejected.len());
    if longest + 1 > max_seq_len {
        return Err(Error::SequenceTooLong {
            len: longest + 1,
            max: max_seq_len,
        });
    }
    let keep = max_seq_len - longest;
    if prompt.len() > keep {
        prompt.drain(..prompt.len() - keep);
    }
    Ok((prompt, chosen, rejected))
}

/// All four summed log-probabilities for one record.
pub fn preference_logps<P, R>(
    policy: &P,
    reference: &R,
    vocab: &Vocabulary,
    record: &PreferenceRecord,
) -> Result<PreferenceLogps>
where
    P: GraphModel,
    R: GraphModel,
{
    let max_len = policy.config().max_seq_len;
    let (prompt, chosen, rejected) = tokenize_pair(vocab, record, max_len)?;
    let lp = PreferenceLogps {
        policy_chosen: loglikelihood(policy, &prompt, &chosen)?.0,
        policy_rejected: loglikelihood(policy, &prompt, &rejected)?.0,
        ref_chosen: loglikelihood(reference, &prompt, &chosen)?.0,
        ref_rejected: loglikelihood(reference, &prompt, &rejected)?.0,
    };
    lp.validate()?;
    Ok(lp)
}

/// Record the policy's summed log-probability of `completion` after
/// `prompt` on the tape, differentiably.
fn record_sum_logprob(
    tape: &mut Tape,
    policy: &AdaptedModel,
    prompt: &[u32],
    completion: &[u32],
) -> Result<(crate::numerics::NodeId, Vec<(String, crate::numerics::NodeId)>)> {
    let mut full = prompt.to_vec();
    full.extend_from_slice(completion);
    let inputs = &full[..full.len() - 1];
    let targets = &full[1..];
    let mask: Vec<bool> = (1..full.len()).map(|pos| pos >= prompt.len()).collect();
    let count = mask.iter().filter(|&&m| m).count();
    let build = policy.build_forward(tape, inputs, true, None)?;
    let ce = tape.masked_ce_mean(build.logits, targets, &mask)?;
    let sum_logp = tape.scale(ce, -(count as f64));
    Ok((sum_logp, build.params))
}

/// One preference-optimization stage. The reference stays frozen throughout;
/// gradients flow only into the policy's adapters. Logs per-step loss and
/// mean margin.
pub fn run_dpo(
    policy: &mut AdaptedModel,
    reference: &ModelWeights,
    vocab: &Vocabulary,
    dataset: &[PreferenceRecord],
    cfg: &TrainConfig,
    dpo: &DpoConfig,
) -> Result<Vec<StepMetric>> {
    cfg.validate()?;
    if !(dpo.beta > 0.0 && dpo.beta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "dpo beta {} must be positive for training",
            dpo.beta
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidData("dpo: empty dataset".into()));
    }
    if policy.config() != &reference.cfg {
        return Err(Error::InvalidConfig(
            "policy and reference have different architectures".into(),
        ));
    }
    let max_len = cfg.max_seq_len.min(policy.config().max_seq_len);
    let beta = dpo.beta as f64;

    // Reference log-probabilities never change; compute them once.
    let pairs: Vec<TokenizedPair> = dataset
        .iter()
        .map(|record| {
            let (prompt, chosen, rejected) = tokenize_pair(vocab, record, max_len)?;
            let (ref_chosen, _) = loglikelihood(reference, &prompt, &chosen)?;
            let (ref_rejected, _) = loglikelihood(reference, &prompt, &rejected)?;
            Ok(TokenizedPair {
                prompt,
                chosen,
                rejected,
                ref_chosen,
                ref_rejected,
            })
        })
        .collect::<Result<_>>()?;

    let rng = RngState::new(cfg.seed);
    let mut state = OptimizerState::new();
    let mut metrics = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng.stream(&format!("dpo.shuffle.{epoch}")));

        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let mut grad_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut batch_loss = 0.0;
            let mut batch_margin = 0.0;
            for &idx in batch {
                let pair = &pairs[idx];
                let mut tape = Tape::new();
                let (lp_chosen, params_c) =
                    record_sum_logprob(&mut tape, policy, &pair.prompt, &pair.chosen)?;
                let (lp_rejected, params_r) =
                    record_sum_logprob(&mut tape, policy, &pair.prompt, &pair.rejected)?;
                let policy_delta = tape.sub(lp_chosen, lp_rejected)?;
                let ref_delta = tape.constant_scalar(pair.ref_chosen - pair.ref_rejected);
                let delta = tape.sub(policy_delta, ref_delta)?;
                let loss = tape.neg_log_sigmoid(delta, beta)?;

                let logps = PreferenceLogps {
                    policy_chosen: tape.scalar_value(lp_chosen),
                    policy_rejected: tape.scalar_value(lp_rejected),
                    ref_chosen: pair.ref_chosen,
                    ref_rejected: pair.ref_rejected,
                };
                logps.validate()?;
                batch_loss += tape.scalar_value(loss) * inv;
                batch_margin += tape.scalar_value(delta) * inv;

                tape.backward(loss)?;
                for (name, node) in params_c.iter().chain(params_r.iter()) {
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
            apply_step(policy, &mut state, cfg, &grad_acc)?;
            step += 1;
            metrics.push(StepMetric {
                stage: "dpo".to_string(),
                step,
                loss: batch_loss,
                lr: cfg.learning_rate as f64,
                margin: Some(batch_margin),
            });
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(pc: f64, pr: f64, rc: f64, rr: f64) -> PreferenceLogps {
        PreferenceLogps {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: rc,
            ref_rejected: rr,
        }
    }

    #[test]
    fn zero_margin_loss_is_ln2() {
        let (loss, margin) = dpo_loss(&lp(-5.0, -7.0, -5.0, -7.0), 0.1);
        assert_eq!(margin, 0.0);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_loss_is_ln2_for_any_inputs() {
        let (loss, _) = dpo_loss(&lp(-1.0, -90.0, -3.0, -4.5), 0.0);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pinned_value_beta_point_one_delta_two() {
        let (loss, margin) = dpo_loss(&lp(-1.0, -5.0, -1.5, -3.5), 0.1);
        assert!((margin - 2.0).abs() < 1e-12);
        // High-precision scalar oracle: -ln(sigmoid(beta * 2)).
        let x = 0.1f32 as f64 * 2.0;
        let oracle = -(1.0 / (1.0 + (-x).exp())).ln();
        assert!((loss - oracle).abs() < 1e-12);
        assert!((loss - 0.598139).abs() < 1e-5);
    }

    #[test]
    fn loss_strictly_decreasing_in_margin() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let delta = -5.0 + i as f64 * 0.2;
            let (loss, _) = dpo_loss(&lp(delta, 0.0, 0.0, 0.0), 0.5);
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn gradient_signs_by_finite_differences() {
        // d loss / d policy_chosen < 0 and d loss / d policy_rejected > 0
        // whenever beta > 0.
        let beta = 0.3;
        let base = lp(-2.0, -3.0, -2.5, -2.5);
        let h = 1e-5;
        let f = |pc: f64, pr: f64| dpo_loss(&lp(pc, pr, -2.5, -2.5), beta).0;
        let d_chosen =
            (f(base.policy_chosen + h, base.policy_rejected) - f(base.policy_chosen - h, base.policy_rejected)) / (2.0 * h);
        let d_rejected =
            (f(base.policy_chosen, base.policy_rejected + h) - f(base.policy_chosen, base.policy_rejected - h)) / (2.0 * h);
        assert!(d_chosen < 0.0);
        assert!(d_rejected > 0.0);
    }

    #[test]
    fn filter_drops_excluded_sources_and_low_scores() {
        let rec = |source: &str, score: Option<f32>| PreferenceRecord {
            prompt: PreferencePrompt::Text("q".into()),
            chosen: "a".into(),
            rejected: "b".into(),
            source: source.into(),
            score,
        };
        let records = vec![
            rec("toxic-dpo-v0.2", Some(10.0)),
            rec("clean", Some(5.0)),
            rec("clean", Some(9.0)),
            rec("clean", Some(10.0)),
            rec("unscored", None),
        ];
        let kept = filter_preferences(records, 9.0, &["toxic-dpo-v0.2".to_string()]);
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|r| r.source != "toxic-dpo-v0.2"));
        assert!(kept
            .iter()
            .all(|r| r.score.is_none_or(|s| s >= 9.0)));
    }

    #[test]
    fn filter_identity_with_no_constraints() {
        let records = vec![PreferenceRecord {
            prompt: PreferencePrompt::Text("q".into()),
            chosen: "a".into(),
            rejected: "b".into(),
            source: "s".into(),
            score: Some(1.0),
        }];
        let kept = filter_preferences(records.clone(), f32::NEG_INFINITY, &[]);
        assert_eq!(kept, records);
    }

    #[test]
    fn identical_completions_rejected() {
        let r = PreferenceRecord {
            prompt: PreferencePrompt::Text("q".into()),
            chosen: "same".into(),
            rejected: "same".into(),
            source: String::new(),
            score: None,
        };
        assert!(r.validate().is_err());
    }
}
