//! Per-sample noise-index selection.
//!
//! Each training step needs one grid index per batch element. The default
//! draws a batch of Beta(α, β) variates, min-max normalizes them over the
//! batch, and maps onto the index range — the batch minimum always lands on
//! index 0 and the maximum on the top index. A lognormal interval
//! distribution and a uniform fallback are provided as alternatives.
//!
//! ```
//! use pfct::noise_select::{sample_beta_indices, NoiseSelectConfig};
//! use pfct::rng::stream;
//!
//! let cfg = NoiseSelectConfig::default();
//! let mut rng = stream(9, "select");
//! // an 11-level grid has 10 adjacent pairs: indices 0..=9
//! let idx = sample_beta_indices(16, 10, &cfg, &mut rng).unwrap();
//! assert!(idx.iter().any(|i| *i == 0));
//! assert!(idx.iter().any(|i| *i == 9));
//! assert!(idx.iter().all(|i| *i <= 9));
//! ```

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{PfctError, Result};
use crate::schedules::SigmaGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSelectMode {
    Beta,
    Lognormal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSelectConfig {
    pub alpha: f64,
    pub beta: f64,
    pub mode: NoiseSelectMode,
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for NoiseSelectConfig {
    fn default() -> Self {
        Self { alpha: 1.5, beta: 5.0, mode: NoiseSelectMode::Beta, p_mean: -1.1, p_std: 2.0 }
    }
}

impl NoiseSelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.p_std > 0.0) {
            return Err(PfctError::invalid("alpha, beta, p_std must be positive"));
        }
        Ok(())
    }
}

/// Batch-normalized Beta index selection over `m` levels:
/// `i_j = ⌊(b_j - min B)/(max B - min B)·(m-1)⌋`, the batch maximum clamped
/// to `m - 1`.
///
/// The marginal is batch-size dependent by construction (normalization is
/// per batch). Requires at least two draws; single-element batches should use
/// uniform mode instead.
pub fn sample_beta_indices<R: Rng>(
    batch_size: usize,
    m: usize,
    cfg: &NoiseSelectConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if m < 2 {
        return Err(PfctError::invalid(format!("need M >= 2, got {m}")));
    }
    if batch_size < 2 {
        return Err(PfctError::invalid(
            "batch-normalized Beta selection needs batch_size >= 2; use uniform mode for single-sample runs",
        ));
    }
    let dist = Beta::new(cfg.alpha, cfg.beta)
        .map_err(|e| PfctError::invalid(format!("beta distribution: {e}")))?;
    let draws: Vec<f64> = (0..batch_size).map(|_| dist.sample(rng)).collect();
    Ok(map_batch_to_indices(&draws, m))
}

/// Min-max map of raw draws onto `[0, m-1]`; exposed for oracle tests.
pub fn map_batch_to_indices(draws: &[f64], m: usize) -> Vec<usize> {
    let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        // probability-zero degeneracy: all draws identical
        return vec![0; draws.len()];
    }
    draws
        .iter()
        .map(|b| {
            // the 1e-9 nudge keeps draws that sit exactly on an interval
            // boundary in decimal arithmetic from flooring one bin low
            let i = ((b - lo) / (hi - lo) * (m - 1) as f64 + 1e-9).floor() as usize;
            i.min(m - 1)
        })
        .collect()
}

/// Interval probabilities of the lognormal selector over a sigma grid:
/// `p_i ∝ erf((ln σ_{i+1} - P_mean)/(√2·P_std)) - erf((ln σ_i - P_mean)/(√2·P_std))`.
pub fn lognormal_interval_probs(grid: &SigmaGrid, cfg: &NoiseSelectConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sigmas = grid.levels();
    if sigmas.len() < 2 {
        return Err(PfctError::invalid("grid needs at least 2 levels"));
    }
    let z = |s: f64| erf((s.ln() - cfg.p_mean) / (2f64.sqrt() * cfg.p_std));
    let raw: Vec<f64> = sigmas.windows(2).map(|w| z(w[1]) - z(w[0])).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|p| p / total).collect())
}

/// Draw indices from the lognormal interval distribution; indices address the
/// lower edge of each (σ_i, σ_{i+1}) interval, so they lie in `[0, M-2]`.
pub fn sample_lognormal_indices<R: Rng>(
    batch_size: usize,
    grid: &SigmaGrid,
    cfg: &NoiseSelectConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let probs = lognormal_interval_probs(grid, cfg)?;
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let last = cumulative.len() - 1;
    Ok((0..batch_size)
        .map(|_| {
            let u: f64 = rng.gen();
            cumulative.iter().position(|c| u <= *c).unwrap_or(last)
        })
        .collect())
}

/// Uniform indices over `[0, m-1]`; the fallback for single-sample batches.
pub fn sample_uniform_indices<R: Rng>(batch_size: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m < 2 {
        return Err(PfctError::invalid(format!("need M >= 2, got {m}")));
    }
    Ok((0..batch_size).map(|_| rng.gen_range(0..m)).collect())
}
