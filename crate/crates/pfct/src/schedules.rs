//! Discretization schedules and the sigma grid.
//!
//! The discretization count M(k) grows with the training step k so that early
//! training sees coarse noise grids (low variance) and late training sees fine
//! ones (low bias). Two schedules ship: the sinusoidal schedule used for
//! training here, and the exponential baseline for ablations.
//!
//! For a given count M, noise levels come from the usual power-interpolated
//! grid between `sigma_min` and `sigma_max` with exponent `rho`, oriented
//! ascending.
//!
//! ```
//! use pfct::schedules::{sigma_grid, ScheduleConfig, ScheduleKind};
//!
//! let cfg = ScheduleConfig { s0: 10, s1: 100, total_steps: 300, kind: ScheduleKind::Sinusoidal };
//! assert_eq!(cfg.steps_at(0).unwrap(), 11);
//! assert_eq!(cfg.steps_at(100).unwrap(), 58);
//! assert_eq!(cfg.steps_at(300).unwrap(), 101);
//!
//! let grid = sigma_grid(18, 0.002, 80.0, 7.0).unwrap();
//! assert_eq!(grid.levels()[0], 0.002);
//! assert_eq!(grid.levels()[17], 80.0);
//! assert!(grid.levels().windows(2).all(|w| w[0] < w[1]));
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{PfctError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Sinusoidal,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub s0: u32,
    pub s1: u32,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { s0: 10, s1: 100, total_steps: 20_000, kind: ScheduleKind::Sinusoidal }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s0 == 0 || self.s1 <= self.s0 {
            return Err(PfctError::invalid(format!("need 0 < s0 < s1, got s0={} s1={}", self.s0, self.s1)));
        }
        if self.total_steps == 0 {
            return Err(PfctError::invalid("total_steps must be >= 1"));
        }
        Ok(())
    }

    /// Discretization count at step `k` for the configured kind.
    pub fn steps_at(&self, k: u64) -> Result<u32> {
        match self.kind {
            ScheduleKind::Sinusoidal => sinusoidal_steps(self, k),
            ScheduleKind::Exponential => exponential_steps(self, k),
        }
    }
}

/// Sinusoidal discretization count
/// `M(k) = ⌊min(|s1·sin(⌊3kπ/K⌋/6) + s0| + 1, s1 + 1)⌋`.
///
/// The floored phase ⌊3kπ/K⌋/6 stays below π/2 over k ∈ [0, K], so the
/// schedule is monotone non-decreasing; the value is floored after the cap
/// since a discretization count must be integral.
pub fn sinusoidal_steps(cfg: &ScheduleConfig, k: u64) -> Result<u32> {
    cfg.validate()?;
    if k > cfg.total_steps {
        return Err(PfctError::invalid(format!("step {k} outside [0, {}]", cfg.total_steps)));
    }
    let phase = (3.0 * k as f64 * std::f64::consts::PI / cfg.total_steps as f64).floor() / 6.0;
    let raw = (cfg.s1 as f64 * phase.sin() + cfg.s0 as f64).abs() + 1.0;
    Ok(raw.min(cfg.s1 as f64 + 1.0).floor() as u32)
}

/// Exponential discretization count
/// `N(k) = ⌊min(s0·2^(k/K'), s1) + 1⌋` with
/// `K' = ⌊K / (log2(⌊s1/s0⌋) + 1)⌋`; the exponent uses real-valued k/K'.
pub fn exponential_steps(cfg: &ScheduleConfig, k: u64) -> Result<u32> {
    cfg.validate()?;
    if k > cfg.total_steps {
        return Err(PfctError::invalid(format!("step {k} outside [0, {}]", cfg.total_steps)));
    }
    if cfg.s1 / cfg.s0 < 2 {
        return Err(PfctError::invalid(format!(
            "exponential schedule needs s1/s0 >= 2, got s0={} s1={}",
            cfg.s0, cfg.s1
        )));
    }
    let k_prime = (cfg.total_steps as f64 / (((cfg.s1 / cfg.s0) as f64).log2().floor() + 1.0)).floor();
    let raw = (cfg.s0 as f64 * 2f64.powf(k as f64 / k_prime)).min(cfg.s1 as f64) + 1.0;
    Ok(raw.floor() as u32)
}

/// An ascending noise grid with its generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaGrid {
    sigmas: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl SigmaGrid {
    pub fn levels(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// Ascending power-interpolated grid:
/// `σ_i = (σ_min^(1/ρ) + (i-1)/(M-1)·(σ_max^(1/ρ) - σ_min^(1/ρ)))^ρ`, i = 1..M.
pub fn sigma_grid(m: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<SigmaGrid> {
    if m < 2 {
        return Err(PfctError::invalid(format!("grid needs M >= 2, got {m}")));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max) {
        return Err(PfctError::invalid(format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")));
    }
    if rho < 1.0 {
        return Err(PfctError::invalid(format!("rho must be >= 1, got {rho}")));
    }
    let lo = sigma_min.powf(1.0 / rho);
    let hi = sigma_max.powf(1.0 / rho);
    let mut sigmas: Vec<f64> = (0..m)
        .map(|i| {
            let t = i as f64 / (m - 1) as f64;
            (lo + t * (hi - lo)).powf(rho)
        })
        .collect();
    // pin the endpoints exactly; powf round-trip drifts in the last ulps
    sigmas[0] = sigma_min;
    sigmas[m - 1] = sigma_max;
    Ok(SigmaGrid { sigmas, sigma_min, sigma_max, rho })
}
