//! Rectified adaptive-moment optimizer with global gradient norm clipping.
//!
//! Early in training the second-moment estimate has too little history to
//! trust; the rectification term switches the update between a plain
//! momentum step and the variance-normalized step once the estimated
//! degrees of freedom `ρ_t` exceed 4. With the default `β2 = 0.999` the
//! switch happens at step 5.

use serde::{Deserialize, Serialize};

use crate::error::{PfctError, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm the gradient is scaled down to when it exceeds it.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PfctError::invalid("learning_rate must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 <= b && b < 1.0) {
                return Err(PfctError::invalid(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.clip_norm > 0.0) {
            return Err(PfctError::invalid("eps and clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Optimizer state: first and second moments aligned one-to-one with the
/// parameter slice list of the network.
#[derive(Debug, Clone)]
pub struct RAdam<T> {
    pub cfg: OptimConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(cfg: OptimConfig, param_shapes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            m: param_shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    /// Global L2 norm over all gradient slices.
    pub fn global_norm(grads: &[&[T]]) -> f64 {
        grads
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| {
                let v = g.into_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// One update. `params` and `grads` must match the shapes given at
    /// construction; gradients are clipped to `clip_norm` first.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(PfctError::ShapeMismatch("optimizer state vs parameter list".into()));
        }
        let norm = Self::global_norm(grads);
        if !norm.is_finite() {
            return Err(PfctError::NonFinite("gradient norm".into()));
        }
        let gscale = if norm > self.cfg.clip_norm { self.cfg.clip_norm / norm } else { 1.0 };

        self.step += 1;
        let t = self.step as f64;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bc2;
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };
        let lr = self.cfg.learning_rate;
        let eps = self.cfg.eps;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(PfctError::ShapeMismatch("parameter slice length changed".into()));
            }
            for i in 0..p.len() {
                let gi = g[i].into_f64() * gscale;
                let mi = b1 * m[i].into_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].into_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::of_f64(mi);
                v[i] = T::of_f64(vi);
                let m_hat = mi / bc1;
                let delta = match rect {
                    Some(r) => lr * r * m_hat / ((vi / bc2).sqrt() + eps),
                    None => lr * m_hat,
                };
                // skip exact zeros so a zero step preserves the sign of
                // negative-zero parameters bit for bit
                if delta != 0.0 {
                    p[i] = T::of_f64(p[i].into_f64() - delta);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_opt(lr: f64) -> RAdam<f64> {
        RAdam::new(OptimConfig { learning_rate: lr, ..OptimConfig::default() }, &[1]).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = scalar_opt(0.0);
        let mut p = vec![0.123456789f64];
        let orig = p.clone();
        for _ in 0..10 {
            opt.update(&mut [&mut p], &[&[1.7]]).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_plain_momentum_step() {
        // rho_1 = 1 <= 4, so the first update is lr * g exactly
        let mut opt = scalar_opt(0.01);
        let mut p = vec![1.0f64];
        opt.update(&mut [&mut p], &[&[0.5]]).unwrap();
        assert!((p[0] - (1.0 - 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rectification_starts_at_step_five() {
        // with beta2 = 0.999, rho_t first exceeds 4 at t = 5
        let b2: f64 = 0.999;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho = |t: f64| rho_inf - 2.0 * t * b2.powf(t) / (1.0 - b2.powf(t));
        assert!(rho(4.0) <= 4.0);
        assert!(rho(5.0) > 4.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize 0.5 (x - 3)^2
        let mut opt = scalar_opt(0.05);
        let mut p = vec![0.0f64];
        for _ in 0..2000 {
            let g = p[0] - 3.0;
            opt.update(&mut [&mut p], &[&[g]]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "got {}", p[0]);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        // a huge gradient is scaled to norm 1, so the first step moves by lr
        let mut opt = scalar_opt(0.01);
        let mut p = vec![0.0f64];
        opt.update(&mut [&mut p], &[&[1e9]]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-12, "got {}", p[0]);
    }

    #[test]
    fn global_norm_spans_slices() {
        let a = [3.0f64];
        let b = [4.0f64];
        assert!((RAdam::global_norm(&[&a, &b]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut opt = RAdam::<f64>::new(OptimConfig::default(), &[2]).unwrap();
        let mut p = vec![0.0f64; 2];
        assert!(opt.update(&mut [&mut p], &[&[1.0]]).is_err());
        assert!(opt.update(&mut [&mut p[..1]], &[&[1.0]]).is_err());
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(OptimConfig { beta1: 1.0, ..OptimConfig::default() }.validate().is_err());
        assert!(OptimConfig { clip_norm: 0.0, ..OptimConfig::default() }.validate().is_err());
        assert!(OptimConfig { learning_rate: f64::NAN, ..OptimConfig::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut opt = scalar_opt(0.03);
            let mut p = vec![1.0f64];
            for k in 0..50 {
                let g = (k as f64 * 0.37).sin() + p[0];
                opt.update(&mut [&mut p], &[&[g]]).unwrap();
            }
            p[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
