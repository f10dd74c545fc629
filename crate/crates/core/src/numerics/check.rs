//! Central-difference gradient verification.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of a [`finite_diff_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over probed entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Number of entries probed.
    pub probes: usize,
}

/// Compare analytic gradients against central differences of `loss_fn`.
///
/// `params` are named flat parameter vectors; `analytic` must carry the same
/// names in the same order. Each probed entry is perturbed by ±`eps` (the
/// achieved f32 perturbation is measured, not assumed) and the loss is
/// re-evaluated. With `probes_per_param = None` every entry is checked;
/// otherwise a deterministic sample of that size is drawn per parameter,
/// which keeps the check tractable on full models.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &mut [(String, Vec<f32>)],
    analytic: &[(String, Vec<f64>)],
    eps: f64,
    probes_per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[(String, Vec<f32>)]) -> Result<f64>,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "finite difference eps {eps} outside [1e-5, 1e-2]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::InvalidData(format!(
            "{} params but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        probes: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..params.len() {
        if params[p].0 != analytic[p].0 {
            return Err(Error::InvalidData(format!(
                "param/gradient name mismatch: {} vs {}",
                params[p].0, analytic[p].0
            )));
        }
        if params[p].1.len() != analytic[p].1.len() {
            return Err(Error::InvalidData(format!(
                "param {} has {} entries but gradient has {}",
                params[p].0,
                params[p].1.len(),
                analytic[p].1.len()
            )));
        }
        let len = params[p].1.len();
        let indices: Vec<usize> = match probes_per_param {
            Some(k) if k < len => (0..k).map(|_| rng.gen_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        for idx in indices {
            let orig = params[p].1[idx];
            let x0 = orig as f64;
            let xp = (x0 + eps) as f32;
            let xm = (x0 - eps) as f32;

            params[p].1[idx] = xp;
            let lp = loss_fn(params)?;
            params[p].1[idx] = xm;
            let lm = loss_fn(params)?;
            params[p].1[idx] = orig;

            if !lp.is_finite() || !lm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss during finite differences at {}[{}]",
                    params[p].0, idx
                )));
            }
            let numeric = (lp - lm) / (xp as f64 - xm as f64);
            let a = analytic[p].1[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.probes += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params[p].0.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
