//! Forward-pass graph assembly and loglikelihood scoring.
//!
//! The architecture is a pre-norm residual decoder: rms-norm, rotary
//! positions on q/k, causal multi-head attention, and a SiLU-gated feed
//! forward. One assembly routine serves both the dense model and the
//! adapter-wrapped model; they differ only in how projections are built.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

use super::config::ModelConfig;
use super::weights::ModelWeights;

/// A projection site on the graph: either a plain weight or a frozen base
/// plus a scaled low-rank delta.
pub(crate) enum ProjNodes {
    Plain(NodeId),
    LowRank {
        base: NodeId,
        /// [r × in]
        a: NodeId,
        /// [out × r]
        b: NodeId,
        scaling: f64,
        dropout: f64,
    },
}

impl ProjNodes {
    fn apply(
        &self,
        tape: &mut Tape,
        x: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        match *self {
            ProjNodes::Plain(w) => tape.linear(x, w),
            ProjNodes::LowRank {
                base,
                a,
                b,
                scaling,
                dropout,
            } => {
                let main = tape.linear(x, base)?;
                let adapter_in = if dropout > 0.0 {
                    if let Some(r) = rng.as_deref_mut() {
                        let keep = 1.0 - dropout;
                        let mask: Vec<f64> = (0..tape.value(x).len())
                            .map(|_| {
                                if r.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        tape.dropout(x, mask)?
                    } else {
                        x
                    }
                } else {
                    x
                };
                let down = tape.linear(adapter_in, a)?;
                let up = tape.linear(down, b)?;
                let delta = tape.scale(up, scaling);
                tape.add(main, delta)
            }
        }
    }
}

pub(crate) struct LayerNodes {
    pub attn_norm: NodeId,
    pub q: ProjNodes,
    pub k: ProjNodes,
    pub v: ProjNodes,
    pub o: ProjNodes,
    pub ffn_norm: NodeId,
    pub gate: ProjNodes,
    pub up: ProjNodes,
    pub down: ProjNodes,
}

pub(crate) struct ModelNodes {
    pub embed: NodeId,
    pub layers: Vec<LayerNodes>,
    pub final_norm: NodeId,
    pub head: ProjNodes,
}

/// Result of recording a forward pass: the logits node plus the named
/// trainable leaves (empty for pure inference).
pub struct ForwardBuild {
    pub logits: NodeId,
    pub params: Vec<(String, NodeId)>,
}

/// Anything that can record its forward pass on a tape.
pub trait GraphModel {
    fn config(&self) -> &ModelConfig;

    /// Record logits for `tokens`. With `trainable`, the model's adjustable
    /// tensors become gradient-receiving leaves listed in the returned
    /// build. `dropout_rng` drives adapter dropout when configured.
    fn build_forward(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        trainable: bool,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardBuild>;
}

pub(crate) fn assemble_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    nodes: &ModelNodes,
    tokens: &[u32],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    if tokens.is_empty() {
        return Err(Error::InvalidData("forward over empty token list".into()));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    let eps = cfg.norm_eps as f64;
    let theta = cfg.rope_theta as f64;

    let mut x = tape.embedding(nodes.embed, tokens)?;
    for layer in &nodes.layers {
        let h = tape.rms_norm(x, layer.attn_norm, eps)?;
        let q = layer.q.apply(tape, h, &mut dropout_rng)?;
        let k = layer.k.apply(tape, h, &mut dropout_rng)?;
        let v = layer.v.apply(tape, h, &mut dropout_rng)?;
        let q = tape.rope(q, cfg.n_heads, theta)?;
        let k = tape.rope(k, cfg.n_heads, theta)?;
        let att = tape.causal_attention(q, k, v, cfg.n_heads)?;
        let o = layer.o.apply(tape, att, &mut dropout_rng)?;
        x = tape.add(x, o)?;

        let h2 = tape.rms_norm(x, layer.ffn_norm, eps)?;
        let g = layer.gate.apply(tape, h2, &mut dropout_rng)?;
        let g = tape.silu(g);
        let u = layer.up.apply(tape, h2, &mut dropout_rng)?;
        let f = tape.mul(g, u)?;
        let d = layer.down.apply(tape, f, &mut dropout_rng)?;
        x = tape.add(x, d)?;
    }
    let h = tape.rms_norm(x, nodes.final_norm, eps)?;
    nodes.head.apply(tape, h, &mut dropout_rng)
}

impl GraphModel for ModelWeights {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn build_forward(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        trainable: bool,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardBuild> {
        let mut params = Vec::new();
        let mut leaf = |tape: &mut Tape, name: String, t: &Tensor| -> NodeId {
            if trainable {
                let id = tape.param_tensor(t);
                params.push((name, id));
                id
            } else {
                tape.leaf_tensor(t)
            }
        };

        let embed = leaf(tape, "tok_embedding".into(), &self.tok_embedding);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            layers.push(LayerNodes {
                attn_norm: leaf(tape, format!("layers.{i}.attn_norm"), &l.attn_norm),
                q: ProjNodes::Plain(leaf(tape, format!("layers.{i}.wq"), &l.wq)),
                k: ProjNodes::Plain(leaf(tape, format!("layers.{i}.wk"), &l.wk)),
                v: ProjNodes::Plain(leaf(tape, format!("layers.{i}.wv"), &l.wv)),
                o: ProjNodes::Plain(leaf(tape, format!("layers.{i}.wo"), &l.wo)),
                ffn_norm: leaf(tape, format!("layers.{i}.ffn_norm"), &l.ffn_norm),
                gate: ProjNodes::Plain(leaf(tape, format!("layers.{i}.w_gate"), &l.w_gate)),
                up: ProjNodes::Plain(leaf(tape, format!("layers.{i}.w_up"), &l.w_up)),
                down: ProjNodes::Plain(leaf(tape, format!("layers.{i}.w_down"), &l.w_down)),
            });
        }
        let final_norm = leaf(tape, "final_norm".into(), &self.final_norm);
        let head = ProjNodes::Plain(leaf(tape, "lm_head".into(), &self.lm_head));

        let nodes = ModelNodes {
            embed,
            layers,
            final_norm,
            head,
        };
        let logits = assemble_forward(tape, &self.cfg, &nodes, tokens, dropout_rng)?;
        Ok(ForwardBuild { logits, params })
    }
}

/// Plain inference pass: logits for every position, shape [T × vocab].
pub fn forward<M: GraphModel>(model: &M, tokens: &[u32]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let build = model.build_forward(&mut tape, tokens, false, None)?;
    tape.tensor_value(build.logits)
}

/// Sum of continuation log-probabilities given a prompt, plus whether every
/// continuation token is the greedy argmax at its position.
pub fn loglikelihood<M: GraphModel>(
    model: &M,
    prompt_ids: &[u32],
    continuation_ids: &[u32],
) -> Result<(f64, bool)> {
    if prompt_ids.is_empty() {
        return Err(Error::InvalidData(
            "loglikelihood needs a non-empty prompt".into(),
        ));
    }
    if continuation_ids.is_empty() {
        return Err(Error::InvalidData(
            "loglikelihood needs a non-empty continuation".into(),
        ));
    }
    let total = prompt_ids.len() + continuation_ids.len();
    if total > model.config().max_seq_len {
        return Err(Error::SequenceTooLong {
            len: total,
            max: model.config().max_seq_len,
        });
    }
    let mut full = Vec::with_capacity(total);
    full.extend_from_slice(prompt_ids);
    full.extend_from_slice(continuation_ids);

    let inputs = &full[..total - 1];
    let mut tape = Tape::new();
    let build = model.build_forward(&mut tape, inputs, false, None)?;
    let logits = tape.value(build.logits);
    let vocab = model.config().vocab_size;

    let mut sum = 0.0;
    let mut greedy = true;
    for (j, &target) in continuation_ids.iter().enumerate() {
        let row_idx = prompt_ids.len() - 1 + j;
        let row = &logits[row_idx * vocab..(row_idx + 1) * vocab];
        let lse = crate::numerics::kernels::logsumexp(row);
        sum += row[target as usize] - lse;
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty row");
        if argmax != target as usize {
            greedy = false;
        }
    }
    Ok((sum, greedy))
}
