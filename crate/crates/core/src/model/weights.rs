//! Model parameters and deterministic initialization.
//!
//! All projection matrices use the `[out_features × in_features]` layout, so
//! a projection is `y = x @ W^T`. Tensor names are stable and shared by the
//! checkpoint index, adapter targeting and the gradient checker.

use crate::error::{Error, Result};
use crate::numerics::{fill_normal, RngState, Tensor};

use super::config::ModelConfig;

pub const INIT_STD: f32 = 0.02;

/// One transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm: Tensor,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

/// Full dense parameter set. The output head is untied from the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub cfg: ModelConfig,
    pub tok_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Tensor,
    pub lm_head: Tensor,
}

/// Short names of the per-layer projection matrices, in graph order.
pub const LAYER_PROJECTIONS: [&str; 7] = ["wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"];

/// Shape of a named projection under `cfg`, `[out, in]`.
pub fn projection_shape(cfg: &ModelConfig, name: &str) -> Option<[usize; 2]> {
    let d = cfg.d_model;
    match name {
        "wq" | "wk" | "wv" | "wo" => Some([d, d]),
        "w_gate" | "w_up" => Some([cfg.d_ff, d]),
        "w_down" => Some([d, cfg.d_ff]),
        "lm_head" => Some([cfg.vocab_size, d]),
        _ => None,
    }
}

/// Deterministic initialization: every matrix is N(0, 0.02^2) drawn from a
/// single seeded stream in declaration order; norm gains start at exactly 1.
pub fn init_model(cfg: &ModelConfig, rng: &RngState) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut stream = rng.stream("init.model");
    let d = cfg.d_model;

    let mut normal = |shape: Vec<usize>| -> Tensor {
        let mut data = vec![0.0f32; shape.iter().product()];
        fill_normal(&mut stream, INIT_STD, &mut data);
        Tensor::new(shape, data).expect("finite init")
    };
    let ones = |n: usize| Tensor::new(vec![n], vec![1.0; n]).expect("finite gains");

    let tok_embedding = normal(vec![cfg.vocab_size, d]);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        layers.push(LayerWeights {
            attn_norm: ones(d),
            wq: normal(vec![d, d]),
            wk: normal(vec![d, d]),
            wv: normal(vec![d, d]),
            wo: normal(vec![d, d]),
            ffn_norm: ones(d),
            w_gate: normal(vec![cfg.d_ff, d]),
            w_up: normal(vec![cfg.d_ff, d]),
            w_down: normal(vec![d, cfg.d_ff]),
        });
    }
    let final_norm = ones(d);
    let lm_head = normal(vec![cfg.vocab_size, d]);

    Ok(ModelWeights {
        cfg: cfg.clone(),
        tok_embedding,
        layers,
        final_norm,
        lm_head,
    })
}

impl ModelWeights {
    /// All tensors with their canonical names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("tok_embedding".to_string(), &self.tok_embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.ffn_norm"), &l.ffn_norm));
            out.push((format!("layers.{i}.w_gate"), &l.w_gate));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entry(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entry(name)?;
        Some(self.entry_mut(name))
    }

    fn entry(&self, name: &str) -> Option<&Tensor> {
        match name {
            "tok_embedding" => return Some(&self.tok_embedding),
            "final_norm" => return Some(&self.final_norm),
            "lm_head" => return Some(&self.lm_head),
            _ => {}
        }
        let rest = name.strip_prefix("layers.")?;
        let (idx, field) = rest.split_once('.')?;
        let l = self.layers.get(idx.parse::<usize>().ok()?)?;
        Some(match field {
            "attn_norm" => &l.attn_norm,
            "wq" => &l.wq,
            "wk" => &l.wk,
            "wv" => &l.wv,
            "wo" => &l.wo,
            "ffn_norm" => &l.ffn_norm,
            "w_gate" => &l.w_gate,
            "w_up" => &l.w_up,
            "w_down" => &l.w_down,
            _ => return None,
        })
    }

    fn entry_mut(&mut self, name: &str) -> &mut Tensor {
        match name {
            "tok_embedding" => return &mut self.tok_embedding,
            "final_norm" => return &mut self.final_norm,
            "lm_head" => return &mut self.lm_head,
            _ => {}
        }
        let rest = name.strip_prefix("layers.").expect("known name");
        let (idx, field) = rest.split_once('.').expect("known name");
        let l = &mut self.layers[idx.parse::<usize>().expect("known index")];
        match field {
            "attn_norm" => &mut l.attn_norm,
            "wq" => &mut l.wq,
            "wk" => &mut l.wk,
            "wv" => &mut l.wv,
            "wo" => &mut l.wo,
            "ffn_norm" => &mut l.ffn_norm,
            "w_gate" => &mut l.w_gate,
            "w_up" => &mut l.w_up,
            "w_down" => &mut l.w_down,
            _ => unreachable!("known field"),
        }
    }

    /// Rebuild a weight set from named tensors (checkpoint load path).
    pub fn from_named(cfg: &ModelConfig, mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let zero = |shape: Vec<usize>| Tensor::zeros(shape);
        let d = cfg.d_model;
        let mut w = ModelWeights {
            cfg: cfg.clone(),
            tok_embedding: zero(vec![cfg.vocab_size, d]),
            layers: (0..cfg.n_layers)
                .map(|_| LayerWeights {
                    attn_norm: zero(vec![d]),
                    wq: zero(vec![d, d]),
                    wk: zero(vec![d, d]),
                    wv: zero(vec![d, d]),
                    wo: zero(vec![d, d]),
                    ffn_norm: zero(vec![d]),
                    w_gate: zero(vec![cfg.d_ff, d]),
                    w_up: zero(vec![cfg.d_ff, d]),
                    w_down: zero(vec![d, cfg.d_ff]),
                })
                .collect(),
            final_norm: zero(vec![d]),
            lm_head: zero(vec![cfg.vocab_size, d]),
        };
        let expected: Vec<String> = w.named().iter().map(|(n, _)| n.clone()).collect();
        for name in &expected {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            let slot = w.entry_mut(name);
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Format(format!("unexpected tensor {name}")));
        }
        Ok(w)
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}
