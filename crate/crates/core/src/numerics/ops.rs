//! Eager tensor operations.
//!
//! These are the plain (non-recorded) versions of the math the model is
//! built from. The differentiable path goes through [`super::tape::Tape`],
//! which uses the same kernels.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn upcast(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn downcast(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    Tensor::new(shape, data.into_iter().map(|v| v as f32).collect())
}

/// Standard matrix product of a [m×k] and b [k×n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    downcast(
        vec![m, n],
        kernels::matmul(&upcast(a), &upcast(b), m, k, n),
    )
}

/// Row-wise log-softmax, stabilized by row-max subtraction.
pub fn log_softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::DimensionMismatch {
            op: "log_softmax_rows",
            left: x.shape().to_vec(),
            right: vec![],
        });
    }
    // Tensor construction already rejects non-finite values; this is the
    // operation-level contract for data arriving through other paths.
    if let Some(bad) = x.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log_softmax input {bad}")));
    }
    downcast(
        x.shape().to_vec(),
        kernels::log_softmax_rows(&upcast(x), x.rows(), x.cols()),
    )
}

/// Mean over masked positions of `-log softmax(logits)[t, targets[t]]`.
pub fn cross_entropy_next_token(logits: &Tensor, targets: &[u32], mask: &[bool]) -> Result<f32> {
    if logits.shape().len() != 2 {
        return Err(Error::DimensionMismatch {
            op: "cross_entropy_next_token",
            left: logits.shape().to_vec(),
            right: vec![],
        });
    }
    let (rows, cols) = (logits.rows(), logits.cols());
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::InvalidData(format!(
            "cross_entropy_next_token: {} rows, {} targets, {} mask entries",
            rows,
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyLoss("all mask entries are false".into()));
    }
    let data = upcast(logits);
    let mut total = 0.0;
    for t in 0..rows {
        if !mask[t] {
            continue;
        }
        let target = targets[t] as usize;
        if target >= cols {
            return Err(Error::IndexOutOfRange {
                context: "cross_entropy target".into(),
                index: target,
                bound: cols,
            });
        }
        let row = &data[t * cols..(t + 1) * cols];
        total += kernels::logsumexp(row) - row[target];
    }
    Ok((total / count as f64) as f32)
}

/// x / sqrt(mean(x^2) + eps) * gain over each trailing vector.
pub fn rms_norm(x: &Tensor, gain: &Tensor, eps: f32) -> Result<Tensor> {
    let d = gain.numel();
    if gain.shape().len() != 1 || !x.numel().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            op: "rms_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("rms_norm eps {eps} must be > 0")));
    }
    let (out, _) = kernels::rms_norm_fwd(&upcast(x), &upcast(gain), d, eps as f64);
    downcast(x.shape().to_vec(), out)
}
