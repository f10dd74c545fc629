//! 4-bit blockwise quantization on the normal-float codebook.
//!
//! Weights are split into flat blocks; each block stores one f32 absmax
//! scale and one 4-bit code per value. Codes index a 16-level grid built
//! from standard-normal quantiles, normalized to [-1, 1]. No 4-bit
//! arithmetic happens anywhere: matrices are reconstructed to f32 before
//! use.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Probability mass covered by the outermost quantile on each side:
/// 1 - (1/32 + 1/30)/2.
pub const NF4_OFFSET: f64 = 0.9677083;

/// The pinned 16-level codebook. Regenerated from an inverse-normal-CDF
/// oracle in the test suite; see [`nf4_levels_from_inverse_cdf`] for the
/// construction.
pub const NF4_CODEBOOK: [f32; 16] = [
    -1.0,
    -0.6961929,
    -0.52507305,
    -0.394_917_5,
    -0.28444135,
    -0.18477343,
    -0.09104999,
    0.0,
    0.07958033,
    0.16093017,
    0.24611229,
    0.33791518,
    0.4407098,
    0.56261694,
    0.722_956_7,
    1.0,
];

/// Identifier stored next to serialized codes so a checkpoint names the grid
/// it was quantized against.
pub const NF4_CODEBOOK_ID: &str = "nf4";

/// Build the 16 levels from any inverse normal CDF: the positive half-range
/// takes Phi^-1 over 9 evenly spaced probabilities in [0.5, offset] (the 8
/// above 0.5), the negative half-range mirrors 8 evenly spaced probabilities
/// (the 7 below 0.5), both joined at 0 and normalized so the extreme
/// magnitudes are exactly 1.
pub fn nf4_levels_from_inverse_cdf(inverse_cdf: impl Fn(f64) -> f64) -> [f64; 16] {
    let mut levels = Vec::with_capacity(16);
    for j in 1..=8 {
        let p = 0.5 + j as f64 * (NF4_OFFSET - 0.5) / 8.0;
        levels.push(inverse_cdf(p));
    }
    for j in 1..=7 {
        let p = 0.5 + j as f64 * (NF4_OFFSET - 0.5) / 7.0;
        levels.push(-inverse_cdf(p));
    }
    levels.push(0.0);
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    let max = levels
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);
    let mut out = [0.0; 16];
    for (o, v) in out.iter_mut().zip(&levels) {
        *o = v / max;
    }
    out
}

/// The 16-level quantization grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Nf4Codebook {
    levels: [f32; 16],
}

/// The pinned codebook: strictly increasing, endpoints ±1, exactly one 0.
pub fn build_nf4_codebook() -> Nf4Codebook {
    Nf4Codebook {
        levels: NF4_CODEBOOK,
    }
}

impl Nf4Codebook {
    pub fn levels(&self) -> &[f32; 16] {
        &self.levels
    }

    /// Largest gap between adjacent levels; the reconstruction error of any
    /// value is at most `absmax * max_gap / 2`.
    pub fn max_adjacent_gap(&self) -> f32 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f32::max)
    }

    /// Index of the nearest level; exact midpoints resolve to the lower
    /// index.
    pub fn nearest(&self, normalized: f32) -> u8 {
        let mut best = 0usize;
        let mut best_dist = (normalized - self.levels[0]).abs();
        for (i, &l) in self.levels.iter().enumerate().skip(1) {
            let d = (normalized - l).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best as u8
    }
}

/// A matrix stored as per-block absmax scales plus packed 4-bit codes, two
/// per byte with the low nibble first. The final block may be short; an odd
/// number of values leaves the last high nibble zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    shape: Vec<usize>,
    block_size: usize,
    scales: Vec<f32>,
    codes: Vec<u8>,
}

impl QuantizedMatrix {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Rebuild from serialized parts, validating every structural invariant.
    pub fn from_parts(
        shape: Vec<usize>,
        block_size: usize,
        scales: Vec<f32>,
        codes: Vec<u8>,
    ) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if block_size < 2 {
            return Err(Error::Format(format!("block_size {block_size} below 2")));
        }
        let expected_blocks = numel.div_ceil(block_size);
        if scales.len() != expected_blocks {
            return Err(Error::Format(format!(
                "{} scales for {} blocks",
                scales.len(),
                expected_blocks
            )));
        }
        if codes.len() != numel.div_ceil(2) {
            return Err(Error::Format(format!(
                "{} code bytes for {} values",
                codes.len(),
                numel
            )));
        }
        if let Some(bad) = scales.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Format(format!("scale {bad} must be finite and >= 0")));
        }
        if numel % 2 == 1 {
            let pad = codes.last().copied().unwrap_or(0) >> 4;
            if pad != 0 {
                return Err(Error::Format(format!(
                    "corrupt code index: padding nibble {pad} must be 0"
                )));
            }
        }
        Ok(Self {
            shape,
            block_size,
            scales,
            codes,
        })
    }
}

/// Quantize a finite matrix blockwise: per block, scale = max |value| and
/// each value maps to the nearest codebook level of value/scale.
pub fn quantize_nf4(m: &Tensor, block_size: usize) -> Result<QuantizedMatrix> {
    if block_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "block_size {block_size} must be >= 2"
        )));
    }
    let codebook = build_nf4_codebook();
    let data = m.data();
    let n_blocks = data.len().div_ceil(block_size);
    let mut scales = Vec::with_capacity(n_blocks);
    let mut nibbles = Vec::with_capacity(data.len());
    for block in data.chunks(block_size) {
        let scale = block.iter().map(|v| v.abs()).fold(0.0f32, f32::max);
        scales.push(scale);
        for &v in block {
            let normalized = if scale == 0.0 { 0.0 } else { v / scale };
            nibbles.push(codebook.nearest(normalized));
        }
    }
    let mut codes = Vec::with_capacity(nibbles.len().div_ceil(2));
    for pair in nibbles.chunks(2) {
        let lo = pair[0];
        let hi = pair.get(1).copied().unwrap_or(0);
        codes.push(lo | (hi << 4));
    }
    Ok(QuantizedMatrix {
        shape: m.shape().to_vec(),
        block_size,
        scales,
        codes,
    })
}

/// Reconstruct the f32 matrix: value = `codebook[code] * block scale`.
pub fn dequantize_nf4(q: &QuantizedMatrix) -> Result<Tensor> {
    let codebook = build_nf4_codebook();
    let numel = q.numel();
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let byte = q.codes[i / 2];
        let code = if i % 2 == 0 { byte & 0x0F } else { byte >> 4 };
        let scale = q.scales[i / q.block_size];
        data.push(codebook.levels[code as usize] * scale);
    }
    Tensor::new(q.shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_invariants() {
        let cb = build_nf4_codebook();
        assert_eq!(cb.levels[0], -1.0);
        assert_eq!(cb.levels[15], 1.0);
        assert_eq!(cb.levels.iter().filter(|&&v| v == 0.0).count(), 1);
        for w in cb.levels.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn exact_codebook_members_reconstruct_exactly() {
        let t = Tensor::new(vec![1, 4], vec![1.0, -1.0, 0.0, 0.56261694]).unwrap();
        let q = quantize_nf4(&t, 4).unwrap();
        let r = dequantize_nf4(&q).unwrap();
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn zero_block_has_zero_scale_and_reconstruction() {
        let t = Tensor::zeros(vec![2, 4]);
        let q = quantize_nf4(&t, 4).unwrap();
        assert!(q.scales().iter().all(|&s| s == 0.0));
        assert!(dequantize_nf4(&q).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn error_bounded_by_half_max_gap() {
        let cb = build_nf4_codebook();
        let g = cb.max_adjacent_gap();
        let vals: Vec<f32> = (0..256).map(|i| ((i * 2654435761u64 as usize) % 1000) as f32 / 500.0 - 1.0).collect();
        let t = Tensor::new(vec![16, 16], vals.clone()).unwrap();
        let q = quantize_nf4(&t, 64).unwrap();
        let r = dequantize_nf4(&q).unwrap();
        for (block_idx, block) in vals.chunks(64).enumerate() {
            let scale = q.scales()[block_idx];
            for (j, &v) in block.iter().enumerate() {
                let err = (v - r.data()[block_idx * 64 + j]).abs();
                assert!(err <= scale * g / 2.0 + 1e-7, "err {err} vs bound {}", scale * g / 2.0);
            }
        }
    }

    #[test]
    fn requantizing_a_reconstruction_is_a_fixed_point() {
        let vals: Vec<f32> = (0..96).map(|i| (i as f32 * 0.77).sin() * 0.3).collect();
        let t = Tensor::new(vec![8, 12], vals).unwrap();
        let q = quantize_nf4(&t, 32).unwrap();
        let d1 = dequantize_nf4(&q).unwrap();
        let q2 = quantize_nf4(&d1, 32).unwrap();
        let d2 = dequantize_nf4(&q2).unwrap();
        assert_eq!(d1.data(), d2.data());
    }

    #[test]
    fn odd_sizes_round_trip_with_padding() {
        let t = Tensor::new(vec![3, 5], (0..15).map(|i| i as f32 / 7.0 - 1.0).collect()).unwrap();
        let q = quantize_nf4(&t, 4).unwrap();
        assert_eq!(q.codes().len(), 8);
        let r = dequantize_nf4(&q).unwrap();
        assert_eq!(r.shape(), &[3, 5]);
    }

    #[test]
    fn from_parts_validates_structure() {
        let t = Tensor::new(vec![3, 3], vec![0.5; 9]).unwrap();
        let q = quantize_nf4(&t, 4).unwrap();
        // Valid round trip.
        QuantizedMatrix::from_parts(
            q.shape().to_vec(),
            q.block_size(),
            q.scales().to_vec(),
            q.codes().to_vec(),
        )
        .unwrap();
        // Corrupt padding nibble.
        let mut bad = q.codes().to_vec();
        *bad.last_mut().unwrap() |= 0xF0;
        assert!(matches!(
            QuantizedMatrix::from_parts(q.shape().to_vec(), q.block_size(), q.scales().to_vec(), bad),
            Err(Error::Format(_))
        ));
        // Wrong scale count.
        assert!(QuantizedMatrix::from_parts(
            q.shape().to_vec(),
            q.block_size(),
            vec![1.0],
            q.codes().to_vec()
        )
        .is_err());
        // Negative scale.
        assert!(QuantizedMatrix::from_parts(
            q.shape().to_vec(),
            q.block_size(),
            vec![-1.0, 1.0, 1.0],
            q.codes().to_vec()
        )
        .is_err());
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        let cb = build_nf4_codebook();
        // Exact midpoint between levels 7 (0.0) and 8 (0.07958033).
        let mid = (cb.levels[7] + cb.levels[8]) / 2.0;
        assert_eq!(cb.nearest(mid), 7);
    }
}
