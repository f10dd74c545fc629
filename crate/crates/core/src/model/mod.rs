//! Toy decoder-only causal transformer.

mod config;
mod forward;
mod generate;
mod weights;

pub use config::{ModelConfig, SamplingParams};
pub use forward::{forward, loglikelihood, ForwardBuild, GraphModel};
pub(crate) use forward::{assemble_forward, LayerNodes, ModelNodes, ProjNodes};
pub use generate::{generate, sample_from_logits};
pub use weights::{init_model, projection_shape, LayerWeights, ModelWeights, INIT_STD, LAYER_PROJECTIONS};
