//! The three training stages over one shared optimizer.

mod adapt;
mod dpo;
mod optim;
mod sft;

use serde::{Deserialize, Serialize};

use crate::adapters::AdaptedModel;
use crate::error::{Error, Result};
use crate::model::ModelWeights;

pub use adapt::{perplexity, run_adaptation, run_pretrain, AdaptationReport};
pub use dpo::{
    dpo_loss, filter_preferences, preference_logps, run_dpo, DpoConfig, PreferenceLogps,
    PreferencePrompt, PreferenceRecord,
};
pub use optim::{
    adamw_step, LossMaskMode, OptimizerState, TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use sft::{run_sft, sft_loss, SftExample};

/// One line of the metrics log (JSON-lines, one object per optimizer step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetric {
    pub stage: String,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

/// What a model exposes to the optimizer. The two implementations define
/// the two training modes: adapters only, or every dense tensor.
pub trait TrainableParams {
    /// Named snapshot of the trainable vectors, in a stable order matching
    /// the names produced by `build_forward`.
    fn trainable_params(&self) -> Vec<(String, Vec<f32>)>;

    /// Write updated vectors back. Names and lengths must match.
    fn write_back(&mut self, updated: &[(String, Vec<f32>)]) -> Result<()>;
}

impl TrainableParams for ModelWeights {
    fn trainable_params(&self) -> Vec<(String, Vec<f32>)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.data().to_vec()))
            .collect()
    }

    fn write_back(&mut self, updated: &[(String, Vec<f32>)]) -> Result<()> {
        for (name, data) in updated {
            let slot = self
                .get_mut(name)
                .ok_or_else(|| Error::InvalidData(format!("unknown parameter {name}")))?;
            slot.set_data(data.clone())?;
        }
        Ok(())
    }
}

impl TrainableParams for AdaptedModel {
    fn trainable_params(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for (site, ad) in self.adapter_entries() {
            out.push((format!("adapter.{site}.a"), ad.a.data().to_vec()));
            out.push((format!("adapter.{site}.b"), ad.b.data().to_vec()));
        }
        out
    }

    fn write_back(&mut self, updated: &[(String, Vec<f32>)]) -> Result<()> {
        for (name, data) in updated {
            let rest = name
                .strip_prefix("adapter.")
                .ok_or_else(|| Error::InvalidData(format!("unknown parameter {name}")))?;
            let (site, which) = rest
                .rsplit_once('.')
                .ok_or_else(|| Error::InvalidData(format!("unknown parameter {name}")))?;
            let mut found = false;
            for (s, ad) in self.adapter_entries_mut() {
                if s == site {
                    match which {
                        "a" => ad.a.set_data(data.clone())?,
                        "b" => ad.b.set_data(data.clone())?,
                        _ => {
                            return Err(Error::InvalidData(format!(
                                "unknown adapter slot {which}"
                            )))
                        }
                    }
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::InvalidData(format!("unknown adapter site {site}")));
            }
        }
        Ok(())
    }
}
