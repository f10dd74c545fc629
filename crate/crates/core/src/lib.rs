//! Desk-scale language-model adaptation pipeline.
//!
//! Everything needed to take a small decoder-only transformer through
//! supervised fine-tuning on instruction data, preference optimization
//! against a frozen reference, and continued pretraining on a raw
//! target-language corpus — with low-rank adapters over a 4-bit quantized
//! frozen base — plus the evaluation harness used to score the result.
//!
//! Modules map one-to-one onto the moving parts:
//!
//! - [`numerics`]: tensors, the gradient tape, seeded RNG, gradient checking
//! - [`tokenizer`]: byte-pair vocabulary with atomic special tokens
//! - [`templating`]: prompt construction for every training stage and chat
//! - [`model`]: the toy causal transformer (init, forward, scoring, sampling)
//! - [`adapters`]: LoRA pairs and NF4 blockwise quantization
//! - [`training`]: the AdamW optimizer and the three stage runners
//! - [`evaluation`]: multiple-choice and generative benchmark scoring

pub mod adapters;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod templating;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
