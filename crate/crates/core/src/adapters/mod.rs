//! Low-rank adaptation over a frozen, blockwise-quantized base.

mod lora;
mod nf4;

pub use lora::{
    attach_lora, effective_weight, resolve_target_sites, AdaptedModel, FrozenMatrix, LoraAdapter,
    LoraConfig,
};
pub use nf4::{
    build_nf4_codebook, dequantize_nf4, nf4_levels_from_inverse_cdf, quantize_nf4, Nf4Codebook,
    QuantizedMatrix, NF4_CODEBOOK, NF4_CODEBOOK_ID, NF4_OFFSET,
};
