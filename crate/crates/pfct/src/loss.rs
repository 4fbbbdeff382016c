//! Weighted pseudo-Huber consistency loss.
//!
//! The student branch evaluates the consistency function at the higher noise
//! level, the teacher at the lower one with gradients stopped. Teacher and
//! student share weights (no moving average), so stopping the gradient is
//! what prevents the degenerate constant-function minimum.
//!
//! ```
//! use pfct::loss::{pseudo_huber, LossConfig};
//! use ndarray::Array4;
//!
//! let cfg = LossConfig::default();
//! let a = Array4::from_elem((1, 1, 4, 4), 0.5_f64);
//! let b = Array4::zeros((1, 1, 4, 4));
//! let c = cfg.c_for_dims(16);
//! let d = pseudo_huber(&a, &b, c).unwrap();
//! // ‖Δ‖ = 2 here, far above c, so the distance is close to ‖Δ‖
//! assert!((d - 2.0).abs() < c);
//! // identical inputs give exactly zero
//! assert_eq!(pseudo_huber(&a, &a, c).unwrap(), 0.0);
//! ```

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{PfctError, Result};
use crate::model::{ApplyCache, ConsistencyFunction};
use crate::nn::{CondUNet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Scale of the pseudo-Huber transition point: `c = c_scale·√N`.
    pub c_scale: f64,
    /// Debug switch: differentiate through the teacher branch as well
    /// (the literal two-sided loss; collapses in training, off by default).
    pub no_stopgrad: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { c_scale: 0.00054, no_stopgrad: false }
    }
}

impl LossConfig {
    /// Transition constant for a flattened instance of `dims` values.
    pub fn c_for_dims(&self, dims: usize) -> f64 {
        self.c_scale * (dims as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_scale > 0.0) {
            return Err(PfctError::invalid("c_scale must be positive"));
        }
        Ok(())
    }
}

/// Pseudo-Huber distance `√(‖a−b‖² + c²) − c` over flattened instances.
pub fn pseudo_huber<T: Scalar>(a: &Array4<T>, b: &Array4<T>, c: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PfctError::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if !(c > 0.0) {
        return Err(PfctError::invalid("c must be positive"));
    }
    let mut sq = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x.into_f64() - y.into_f64();
        sq += d * d;
    }
    Ok((sq + c * c).sqrt() - c)
}

/// Consistency weighting `λ(σ_i) = 1/(σ_{i+1} − σ_i)`.
pub fn weight(sigma_lo: f64, sigma_hi: f64) -> Result<f64> {
    if !(sigma_hi > sigma_lo) {
        return Err(PfctError::invalid(format!("need sigma_hi > sigma_lo, got {sigma_lo}, {sigma_hi}")));
    }
    Ok(1.0 / (sigma_hi - sigma_lo))
}

/// Outcome of a batch loss evaluation.
pub struct LossOutput {
    /// Batch-mean weighted pseudo-Huber value.
    pub loss: f64,
    /// Per-instance unweighted distances, for logging.
    pub distances: Vec<f64>,
}

/// Evaluate the consistency loss over a batch and accumulate parameter
/// gradients.
///
/// Inputs arrive pre-assembled as `(B, 1, H, W)` stacks: `x_hi = x + v·R_hi`
/// and `x_lo = x + v·R_lo` share the angle per element. Per-instance losses
/// are `λ(σ_i)·(√(‖f(x_hi) − f(x_lo)‖² + c²) − c)` averaged over the batch;
/// the teacher (lower-σ) branch contributes no gradient unless the
/// `no_stopgrad` debug switch is set.
pub fn consistency_loss_batch<T: Scalar>(
    f: &ConsistencyFunction<T>,
    x_hi: &Array4<T>,
    sig_hi: &[f64],
    x_lo: &Array4<T>,
    sig_lo: &[f64],
    y: &Array4<T>,
    cfg: &LossConfig,
    grads: &mut CondUNet<T>,
) -> Result<LossOutput> {
    cfg.validate()?;
    let n = x_hi.dim().0;
    if sig_hi.len() != n || sig_lo.len() != n {
        return Err(PfctError::ShapeMismatch("sigma vectors vs batch".into()));
    }
    for (lo, hi) in sig_lo.iter().zip(sig_hi) {
        if !(hi > lo) {
            return Err(PfctError::invalid(format!("sigma pair not ordered: {lo} >= {hi}")));
        }
    }
    let dims = x_hi.len() / n;
    let c = cfg.c_for_dims(dims);

    let (student, student_cache) = f.apply_cached(x_hi, sig_hi, y)?;
    let (teacher, teacher_cache) = f.apply_cached(x_lo, sig_lo, y)?;

    let mut loss = 0.0f64;
    let mut distances = Vec::with_capacity(n);
    let mut g_student: Array4<T> = Array4::zeros(student.dim());
    let mut g_teacher: Array4<T> = Array4::zeros(teacher.dim());
    let inv_n = 1.0 / n as f64;
    for b in 0..n {
        let sb = student.index_axis(Axis(0), b);
        let tb = teacher.index_axis(Axis(0), b);
        let mut sq = 0.0f64;
        for (s, t) in sb.iter().zip(tb.iter()) {
            let d = s.into_f64() - t.into_f64();
            sq += d * d;
        }
        let root = (sq + c * c).sqrt();
        let dist = root - c;
        let lambda = weight(sig_lo[b], sig_hi[b])?;
        let term = lambda * dist;
        if !term.is_finite() {
            return Err(PfctError::NonFinite(format!(
                "loss at sigma pair ({}, {})",
                sig_lo[b], sig_hi[b]
            )));
        }
        loss += term * inv_n;
        distances.push(dist);
        // d loss / d student = λ/n · Δ / root
        let scale = T::of_f64(lambda * inv_n / root);
        let mut gsb = g_student.index_axis_mut(Axis(0), b);
        let mut gtb = g_teacher.index_axis_mut(Axis(0), b);
        ndarray::Zip::from(&mut gsb).and(&sb).and(&tb).for_each(|g, &s, &t| {
            *g = (s - t) * scale;
        });
        if cfg.no_stopgrad {
            ndarray::Zip::from(&mut gtb).and(&sb).and(&tb).for_each(|g, &s, &t| {
                *g = (t - s) * scale;
            });
        }
    }
    route_gradient(f, &student_cache, &g_student, grads);
    if cfg.no_stopgrad {
        route_gradient(f, &teacher_cache, &g_teacher, grads);
    }
    Ok(LossOutput { loss, distances })
}

fn route_gradient<T: Scalar>(
    f: &ConsistencyFunction<T>,
    cache: &ApplyCache<T>,
    g: &Array4<T>,
    grads: &mut CondUNet<T>,
) {
    f.backward(cache, g, grads);
}
