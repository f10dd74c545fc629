//! Low-rank adapters over a frozen (optionally 4-bit quantized) base.
//!
//! Attaching adapters replaces each targeted projection W with
//! `frozen W + (alpha/r) * B @ A`, where only A and B train. B starts at
//! zero, so the attached model reproduces the base bit for bit until the
//! first optimizer step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    assemble_forward, projection_shape, ForwardBuild, GraphModel, LayerNodes, ModelConfig,
    ModelNodes, ModelWeights, ProjNodes, INIT_STD, LAYER_PROJECTIONS,
};
use crate::numerics::{fill_normal, kernels, RngState, Tensor};

use super::nf4::{dequantize_nf4, quantize_nf4, QuantizedMatrix};

/// Adapter hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
    #[serde(default)]
    pub dropout: f32,
    /// Projection names to adapt; layer projections apply to every layer.
    pub targets: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            dropout: 0.0,
            targets: ["wq", "wk", "wv", "wo"].map(String::from).to_vec(),
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("lora rank must be positive".into()));
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lora alpha {} must be positive",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "lora dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("lora targets are empty".into()));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f32 {
        self.alpha / self.rank as f32
    }
}

/// The trainable pair for one site: A is [r × in], B is [out × r].
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
}

/// A targeted base matrix in its frozen storage form.
#[derive(Debug, Clone, PartialEq)]
pub enum FrozenMatrix {
    Dense(Tensor),
    Quantized(QuantizedMatrix),
}

/// Frozen base plus trainable adapters.
///
/// `base` holds the dense working copy used by the forward pass; for
/// quantized targets that copy is the blockwise reconstruction, cached once
/// at attach/load so no 4-bit arithmetic happens per step. The quantized
/// codes in `frozen` stay authoritative for serialization.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    lora: LoraConfig,
    base: ModelWeights,
    frozen: BTreeMap<String, FrozenMatrix>,
    adapters: BTreeMap<String, LoraAdapter>,
}

/// Expand target names into concrete tensor sites, in layer order.
pub fn resolve_target_sites(cfg: &ModelConfig, targets: &[String]) -> Result<Vec<String>> {
    let mut sites = Vec::new();
    for t in targets {
        if t == "lm_head" {
            sites.push(t.clone());
        } else if LAYER_PROJECTIONS.contains(&t.as_str()) {
            for i in 0..cfg.n_layers {
                sites.push(format!("layers.{i}.{t}"));
            }
        } else {
            return Err(Error::InvalidConfig(format!(
                "unknown adapter target {t:?}; expected one of {LAYER_PROJECTIONS:?} or \"lm_head\""
            )));
        }
    }
    sites.sort();
    sites.dedup();
    Ok(sites)
}

fn site_projection(site: &str) -> &str {
    site.rsplit('.').next().unwrap_or(site)
}

/// `base + (alpha/r) * (B @ A)` — the dense weight an adapter pair induces.
pub fn effective_weight(
    base: &Tensor,
    a: &Tensor,
    b: &Tensor,
    alpha: f32,
    rank: usize,
) -> Result<Tensor> {
    let (out_dim, in_dim) = (base.rows(), base.cols());
    if a.shape() != [rank, in_dim] || b.shape() != [out_dim, rank] {
        return Err(Error::DimensionMismatch {
            op: "effective_weight",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let bf: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let af: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let delta = kernels::matmul(&bf, &af, out_dim, rank, in_dim);
    let scaling = alpha as f64 / rank as f64;
    let data: Vec<f32> = base
        .data()
        .iter()
        .zip(&delta)
        .map(|(&w, &d)| (w as f64 + scaling * d) as f32)
        .collect();
    Tensor::new(base.shape().to_vec(), data)
}

/// Wrap `weights`: targeted matrices freeze (quantized when requested) and
/// gain a zero-initialized adapter pair; everything else freezes as-is.
pub fn attach_lora(
    weights: ModelWeights,
    lora: &LoraConfig,
    quantize_base: bool,
    block_size: usize,
    rng: &RngState,
) -> Result<AdaptedModel> {
    lora.validate()?;
    let sites = resolve_target_sites(&weights.cfg, &lora.targets)?;
    let mut base = weights;
    let mut frozen = BTreeMap::new();
    let mut adapters = BTreeMap::new();

    for site in &sites {
        let tensor = base.get(site).expect("resolved site exists").clone();
        let [out_dim, in_dim] =
            projection_shape(&base.cfg, site_projection(site)).expect("projection site");
        if lora.rank > out_dim.min(in_dim) {
            return Err(Error::InvalidConfig(format!(
                "lora rank {} exceeds min dimension {} of target {site}",
                lora.rank,
                out_dim.min(in_dim)
            )));
        }
        let stored = if quantize_base {
            let q = quantize_nf4(&tensor, block_size)?;
            *base.get_mut(site).expect("resolved site exists") = dequantize_nf4(&q)?;
            FrozenMatrix::Quantized(q)
        } else {
            FrozenMatrix::Dense(tensor)
        };
        frozen.insert(site.clone(), stored);

        let mut a_data = vec![0.0f32; lora.rank * in_dim];
        fill_normal(&mut rng.stream(&format!("init.lora.{site}")), INIT_STD, &mut a_data);
        adapters.insert(
            site.clone(),
            LoraAdapter {
                a: Tensor::new(vec![lora.rank, in_dim], a_data)?,
                b: Tensor::zeros(vec![out_dim, lora.rank]),
            },
        );
    }
    Ok(AdaptedModel {
        lora: lora.clone(),
        base,
        frozen,
        adapters,
    })
}

impl AdaptedModel {
    /// Rebuild from serialized parts. The quantized codes are authoritative:
    /// dense working copies of quantized targets are reconstructed here.
    pub fn from_parts(
        lora: LoraConfig,
        mut base: ModelWeights,
        frozen: BTreeMap<String, FrozenMatrix>,
        adapters: BTreeMap<String, LoraAdapter>,
    ) -> Result<Self> {
        lora.validate()?;
        let sites = resolve_target_sites(&base.cfg, &lora.targets)?;
        for site in &sites {
            if !adapters.contains_key(site) {
                return Err(Error::Format(format!("missing adapter for target {site}")));
            }
            let stored = frozen
                .get(site)
                .ok_or_else(|| Error::Format(format!("missing frozen base for target {site}")))?;
            let [out_dim, in_dim] =
                projection_shape(&base.cfg, site_projection(site)).expect("projection site");
            let ad = &adapters[site];
            if ad.a.shape() != [lora.rank, in_dim] || ad.b.shape() != [out_dim, lora.rank] {
                return Err(Error::Format(format!(
                    "adapter {site} has shapes {:?}/{:?}, expected [{},{in_dim}]/[{out_dim},{}]",
                    ad.a.shape(),
                    ad.b.shape(),
                    lora.rank,
                    lora.rank,
                )));
            }
            if let FrozenMatrix::Quantized(q) = stored {
                *base.get_mut(site).expect("site exists") = dequantize_nf4(q)?;
            } else if let FrozenMatrix::Dense(t) = stored {
                *base.get_mut(site).expect("site exists") = t.clone();
            }
        }
        for name in frozen.keys() {
            if !sites.contains(name) {
                return Err(Error::Format(format!("frozen entry {name} is not a target")));
            }
        }
        for name in adapters.keys() {
            if !sites.contains(name) {
                return Err(Error::Format(format!("adapter entry {name} is not a target")));
            }
        }
        Ok(Self {
            lora,
            base,
            frozen,
            adapters,
        })
    }

    pub fn lora_config(&self) -> &LoraConfig {
        &self.lora
    }

    /// The frozen dense view the forward pass reads (quantized targets appear
    /// in reconstructed form).
    pub fn frozen_base(&self) -> &ModelWeights {
        &self.base
    }

    /// Stored form of each targeted base matrix.
    pub fn frozen_entries(&self) -> impl Iterator<Item = (&String, &FrozenMatrix)> {
        self.frozen.iter()
    }

    pub fn adapter_entries(&self) -> impl Iterator<Item = (&String, &LoraAdapter)> {
        self.adapters.iter()
    }

    pub fn adapter_entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut LoraAdapter)> {
        self.adapters.iter_mut()
    }

    /// Σ r·(in+out) over adapted sites.
    pub fn trainable_param_count(&self) -> usize {
        self.adapters
            .values()
            .map(|ad| ad.a.numel() + ad.b.numel())
            .sum()
    }

    /// Canonical bytes of everything frozen: quantized targets serialize as
    /// scales-then-codes, dense tensors as little-endian f32. Training steps
    /// must never change this.
    pub fn frozen_base_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, tensor) in self.base.named() {
            match self.frozen.get(&name) {
                Some(FrozenMatrix::Quantized(q)) => {
                    for s in q.scales() {
                        out.extend_from_slice(&s.to_le_bytes());
                    }
                    out.extend_from_slice(q.codes());
                }
                Some(FrozenMatrix::Dense(t)) => out.extend_from_slice(&t.to_le_bytes()),
                None => out.extend_from_slice(&tensor.to_le_bytes()),
            }
        }
        out
    }

    /// Fold every adapter delta into a dense weight set:
    /// W' = frozen W + (alpha/r)·B@A.
    pub fn merge_lora(&self) -> Result<ModelWeights> {
        let mut merged = self.base.clone();
        for (site, ad) in &self.adapters {
            let slot = merged.get_mut(site).expect("target site exists");
            *slot = effective_weight(slot, &ad.a, &ad.b, self.lora.alpha, self.lora.rank)?;
        }
        Ok(merged)
    }
}

impl GraphModel for AdaptedModel {
    fn config(&self) -> &ModelConfig {
        &self.base.cfg
    }

    fn build_forward(
        &self,
        tape: &mut crate::numerics::Tape,
        tokens: &[u32],
        trainable: bool,
        dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> Result<ForwardBuild> {
        let mut params = Vec::new();
        let scaling = self.lora.scaling() as f64;
        let dropout = if trainable { self.lora.dropout as f64 } else { 0.0 };

        let mut proj = |tape: &mut crate::numerics::Tape, site: String, w: &Tensor| -> ProjNodes {
            match self.adapters.get(&site) {
                Some(ad) => {
                    let base = tape.leaf_tensor(w);
                    let (a, b) = if trainable {
                        let a = tape.param_tensor(&ad.a);
                        let b = tape.param_tensor(&ad.b);
                        params.push((format!("adapter.{site}.a"), a));
                        params.push((format!("adapter.{site}.b"), b));
                        (a, b)
                    } else {
                        (tape.leaf_tensor(&ad.a), tape.leaf_tensor(&ad.b))
                    };
                    ProjNodes::LowRank {
                        base,
                        a,
                        b,
                        scaling,
                        dropout,
                    }
                }
                None => ProjNodes::Plain(tape.leaf_tensor(w)),
            }
        };

        let w = &self.base;
        let embed = tape.leaf_tensor(&w.tok_embedding);
        let mut layers = Vec::with_capacity(w.layers.len());
        for (i, l) in w.layers.iter().enumerate() {
            layers.push(LayerNodes {
                attn_norm: tape.leaf_tensor(&l.attn_norm),
                q: proj(tape, format!("layers.{i}.wq"), &l.wq),
                k: proj(tape, format!("layers.{i}.wk"), &l.wk),
                v: proj(tape, format!("layers.{i}.wv"), &l.wv),
                o: proj(tape, format!("layers.{i}.wo"), &l.wo),
                ffn_norm: tape.leaf_tensor(&l.ffn_norm),
                gate: proj(tape, format!("layers.{i}.w_gate"), &l.w_gate),
                up: proj(tape, format!("layers.{i}.w_up"), &l.w_up),
                down: proj(tape, format!("layers.{i}.w_down"), &l.w_down),
            });
        }
        let final_norm = tape.leaf_tensor(&w.final_norm);
        let head = proj(tape, "lm_head".to_string(), &w.lm_head);

        let nodes = ModelNodes {
            embed,
            layers,
            final_norm,
            head,
        };
        let logits = assemble_forward(tape, &w.cfg, &nodes, tokens, dropout_rng)?;
        Ok(ForwardBuild { logits, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_model};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 64,
            max_seq_len: 32,
            ..Default::default()
        }
    }

    fn attach_default(quantize: bool) -> AdaptedModel {
        let w = init_model(&tiny_cfg(), &RngState::new(5)).unwrap();
        attach_lora(w, &LoraConfig::default(), quantize, 64, &RngState::new(6)).unwrap()
    }

    #[test]
    fn identity_at_init_exact() {
        let w = init_model(&tiny_cfg(), &RngState::new(5)).unwrap();
        let adapted = attach_lora(
            w,
            &LoraConfig::default(),
            true,
            64,
            &RngState::new(6),
        )
        .unwrap();
        // Reference: the same base in its quantized-reconstructed form.
        let base_logits = forward(adapted.frozen_base(), &[1, 2, 3, 4]).unwrap();
        let adapted_logits = forward(&adapted, &[1, 2, 3, 4]).unwrap();
        assert_eq!(base_logits.data(), adapted_logits.data());
    }

    #[test]
    fn unknown_target_rejected() {
        let w = init_model(&tiny_cfg(), &RngState::new(5)).unwrap();
        let lora = LoraConfig {
            targets: vec!["wx".into()],
            ..Default::default()
        };
        assert!(matches!(
            attach_lora(w, &lora, false, 64, &RngState::new(6)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn trainable_count_closed_form() {
        let adapted = attach_default(false);
        // r=8 on four 16x16 projections per layer, two layers:
        // 8 * (16 + 16) * 4 * 2.
        assert_eq!(adapted.trainable_param_count(), 8 * 32 * 8);
    }

    #[test]
    fn effective_weight_hand_case() {
        let base = Tensor::zeros(vec![2, 2]);
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let w = effective_weight(&base, &a, &b, 2.0, 1).unwrap();
        assert_eq!(w.data(), &[2.0, 4.0, 6.0, 12.0]);
    }

    #[test]
    fn effective_weight_zero_b_is_identity() {
        let base = Tensor::new(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let a = Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap();
        let b = Tensor::zeros(vec![2, 2]);
        let w = effective_weight(&base, &a, &b, 16.0, 2).unwrap();
        assert_eq!(w.data(), base.data());
    }

    #[test]
    fn effective_weight_linear_in_alpha() {
        let base = Tensor::zeros(vec![2, 2]);
        let a = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.5, 2.5]).unwrap();
        let w1 = effective_weight(&base, &a, &b, 4.0, 1).unwrap();
        let w2 = effective_weight(&base, &a, &b, 8.0, 1).unwrap();
        for (x, y) in w1.data().iter().zip(w2.data()) {
            assert!((2.0 * x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn merge_matches_adapted_forward() {
        let mut adapted = attach_default(true);
        // Poke the adapters so the delta is non-trivial.
        let poked: Vec<String> = adapted.adapters.keys().cloned().collect();
        for site in poked {
            let ad = adapted.adapters.get_mut(&site).unwrap();
            let vals: Vec<f32> = (0..ad.b.numel()).map(|i| (i as f32 * 0.1).sin() * 0.05).collect();
            ad.b.set_data(vals).unwrap();
        }
        let merged = adapted.merge_lora().unwrap();
        let a = forward(&adapted, &[5, 6, 7]).unwrap();
        let b = forward(&merged, &[5, 6, 7]).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn merge_of_fresh_adapter_is_the_base() {
        let adapted = attach_default(true);
        let merged = adapted.merge_lora().unwrap();
        for ((na, ta), (_, tb)) in merged.named().iter().zip(adapted.frozen_base().named()) {
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
    }

    #[test]
    fn rank_exceeding_dims_rejected() {
        let w = init_model(&tiny_cfg(), &RngState::new(5)).unwrap();
        let lora = LoraConfig {
            rank: 17,
            ..Default::default()
        };
        assert!(attach_lora(w, &lora, false, 64, &RngState::new(6)).is_err());
    }

    #[test]
    fn dropout_is_seeded_and_training_only() {
        use rand::SeedableRng;
        let w = init_model(&tiny_cfg(), &RngState::new(5)).unwrap();
        let lora = LoraConfig {
            dropout: 0.4,
            ..Default::default()
        };
        let mut adapted = attach_lora(w, &lora, false, 64, &RngState::new(6)).unwrap();
        // Non-zero B so the adapter path contributes and dropout shows.
        let sites: Vec<String> = adapted.adapters.keys().cloned().collect();
        for site in sites {
            let ad = adapted.adapters.get_mut(&site).unwrap();
            let vals: Vec<f32> = (0..ad.b.numel()).map(|i| ((i % 7) as f32 - 3.0) * 0.02).collect();
            ad.b.set_data(vals).unwrap();
        }
        let run = |seed: u64, trainable: bool| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut tape = crate::numerics::Tape::new();
            let build = adapted
                .build_forward(&mut tape, &[1, 2, 3], trainable, Some(&mut rng))
                .unwrap();
            tape.value_f32(build.logits)
        };
        // Same stream state reproduces the same masks.
        assert_eq!(run(7, true), run(7, true));
        // Different stream states draw different masks.
        assert_ne!(run(7, true), run(8, true));
        // Inference ignores dropout entirely.
        assert_eq!(run(7, false), run(8, false));
        let plain = forward(&adapted, &[1, 2, 3]).unwrap();
        assert_eq!(run(7, false), plain.data());
    }

    #[test]
    fn parts_round_trip() {
        let adapted = attach_default(true);
        let rebuilt = AdaptedModel::from_parts(
            adapted.lora.clone(),
            adapted.base.clone(),
            adapted.frozen.clone(),
            adapted.adapters.clone(),
        )
        .unwrap();
        assert_eq!(
            adapted.frozen_base_bytes(),
            rebuilt.frozen_base_bytes()
        );
        let a = forward(&adapted, &[1, 2, 3]).unwrap();
        let b = forward(&rebuilt, &[1, 2, 3]).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
