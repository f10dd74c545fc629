//! Dense tensors, reverse-mode gradients over a recorded tape, seeded
//! randomness, and finite-difference verification.

mod check;
pub(crate) mod kernels;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use check::{finite_diff_check, GradCheckReport};
pub use ops::{cross_entropy_next_token, log_softmax_rows, matmul, rms_norm};
pub use rng::{fill_normal, RngState};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
