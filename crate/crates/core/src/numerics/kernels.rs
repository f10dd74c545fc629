//! Raw f64 math kernels shared by the eager tensor ops and the gradient tape.
//!
//! Everything is row-major and single-threaded. Arithmetic runs in f64 so
//! that central-difference gradient checks are limited by truncation error,
//! not rounding noise; public tensors stay f32 at the boundary.

/// C[m×n] = A[m×k] @ B[k×n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Y[m×n] = X[m×k] @ W[n×k]^T — the projection layout used by the model,
/// where weight rows are output channels.
pub fn matmul_nt(x: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; m * n];
    for i in 0..m {
        let xrow = &x[i * k..(i + 1) * k];
        for j in 0..n {
            let wrow = &w[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += xrow[p] * wrow[p];
            }
            y[i * n + j] = s;
        }
    }
    y
}

/// C[k×n] = A[m×k]^T @ B[m×n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        for c in 0..cols {
            out[r * cols + c] = row[c] - lse;
        }
    }
    out
}

/// log(sum(exp(row))) per row.
pub fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = ln(1 + e^x), stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// RMS-normalize each trailing vector of length `d`; returns the output and
/// one inverse-rms factor per vector (needed by the backward pass).
pub fn rms_norm_fwd(x: &[f64], gain: &[f64], d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let ir = 1.0 / (ms + eps).sqrt();
        inv[r] = ir;
        for i in 0..d {
            out[r * d + i] = xr[i] * ir * gain[i];
        }
    }
    (out, inv)
}

/// Backward of [`rms_norm_fwd`]: accumulates into `dx` and `dgain`.
pub fn rms_norm_bwd(
    dy: &[f64],
    x: &[f64],
    gain: &[f64],
    inv: &[f64],
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
) {
    let rows = x.len() / d;
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let ir = inv[r];
        let mut dot = 0.0;
        for i in 0..d {
            dot += dyr[i] * gain[i] * xr[i];
            dgain[i] += dyr[i] * xr[i] * ir;
        }
        let coef = ir * ir * ir / d as f64 * dot;
        for i in 0..d {
            dx[r * d + i] += ir * dyr[i] * gain[i] - coef * xr[i];
        }
    }
}

/// Rotation angles are `pos * theta^(-2i/head_dim)` over adjacent value
/// pairs within each head. Positions run 0..T over the rows.
pub fn rope_fwd(x: &[f64], t_len: usize, n_heads: usize, theta: f64) -> Vec<f64> {
    rope_apply(x, t_len, n_heads, theta, false)
}

/// Backward of RoPE is rotation by the opposite angle.
pub fn rope_bwd(dy: &[f64], t_len: usize, n_heads: usize, theta: f64) -> Vec<f64> {
    rope_apply(dy, t_len, n_heads, theta, true)
}

fn rope_apply(x: &[f64], t_len: usize, n_heads: usize, theta: f64, inverse: bool) -> Vec<f64> {
    let d = x.len() / t_len;
    let hd = d / n_heads;
    let mut out = vec![0.0; x.len()];
    for t in 0..t_len {
        for h in 0..n_heads {
            let base = t * d + h * hd;
            for i in 0..hd / 2 {
                let freq = theta.powf(-2.0 * i as f64 / hd as f64);
                let mut angle = t as f64 * freq;
                if inverse {
                    angle = -angle;
                }
                let (sin, cos) = angle.sin_cos();
                let a = x[base + 2 * i];
                let b = x[base + 2 * i + 1];
                out[base + 2 * i] = a * cos - b * sin;
                out[base + 2 * i + 1] = a * sin + b * cos;
            }
        }
    }
    out
}

/// Multi-head scaled dot-product attention with a causal mask.
///
/// `q`, `k`, `v` are [T×d] with heads laid out as contiguous column blocks.
/// Returns the [T×d] context and the per-head attention probabilities
/// (shape [n_heads×T×T], flattened) for the backward pass.
pub fn causal_attention_fwd(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t_len: usize,
    n_heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = q.len() / t_len;
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; t_len * d];
    let mut probs = vec![0.0; n_heads * t_len * t_len];
    for h in 0..n_heads {
        let col = h * hd;
        for i in 0..t_len {
            let qi = &q[i * d + col..i * d + col + hd];
            // Scores over positions 0..=i only; the rest stay masked out.
            let mut row = vec![0.0; i + 1];
            for (j, rj) in row.iter_mut().enumerate() {
                let kj = &k[j * d + col..j * d + col + hd];
                *rj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for rj in row.iter_mut() {
                *rj = (*rj - m).exp();
                denom += *rj;
            }
            let prow = &mut probs[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
            for (j, rj) in row.iter().enumerate() {
                prow[j] = rj / denom;
            }
            let orow = &mut out[i * d + col..i * d + col + hd];
            for j in 0..=i {
                let p = prow[j];
                if p == 0.0 {
                    continue;
                }
                let vj = &v[j * d + col..j * d + col + hd];
                for c in 0..hd {
                    orow[c] += p * vj[c];
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`causal_attention_fwd`]; accumulates into dq/dk/dv.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_bwd(
    dout: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    t_len: usize,
    n_heads: usize,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let d = q.len() / t_len;
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    for h in 0..n_heads {
        let col = h * hd;
        for i in 0..t_len {
            let prow = &probs[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
            let doi = &dout[i * d + col..i * d + col + hd];
            // dP[j] = dout_i . v_j ; dS = P * (dP - sum_j dP[j] P[j])
            let mut dp = vec![0.0; i + 1];
            let mut dot = 0.0;
            for (j, dpj) in dp.iter_mut().enumerate() {
                let vj = &v[j * d + col..j * d + col + hd];
                *dpj = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot += *dpj * prow[j];
            }
            for j in 0..=i {
                let p = prow[j];
                if p == 0.0 && dp[j] == 0.0 {
                    continue;
                }
                let ds = p * (dp[j] - dot) * scale;
                let kj = &k[j * d + col..j * d + col + hd];
                let qi = &q[i * d + col..i * d + col + hd];
                for c in 0..hd {
                    dq[i * d + col + c] += ds * kj[c];
                    dk[j * d + col + c] += ds * qi[c];
                    dv[j * d + col + c] += p * doi[c];
                }
            }
        }
    }
}
