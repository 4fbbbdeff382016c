//! Reference image-quality metrics and per-split evaluation.
//!
//! SSIM uses the standard 11x11 Gaussian window (σ = 1.5, K1 = 0.01,
//! K2 = 0.03) averaged over valid window positions only, so images must be
//! at least 11 pixels on each side. PSNR with zero error is reported as
//! infinite and excluded from aggregates with a count.
//!
//! ```
//! use pfct::metrics::{psnr, ssim};
//! use ndarray::Array2;
//!
//! let img = Array2::from_shape_fn((32, 32), |(i, j)| ((i * 7 + j) % 13) as f32 / 13.0);
//! assert!((ssim(&img, &img, 2.0).unwrap() - 1.0).abs() < 1e-9);
//!
//! let a = Array2::zeros((8, 8));
//! let b = Array2::from_elem((8, 8), 0.2_f32);
//! // MSE = 0.04, peak² = 4: PSNR = 10·log10(100) = 20 dB
//! assert!((psnr(&a, &b, 2.0).unwrap() - 20.0).abs() < 1e-6);
//! ```

use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use crate::data::TrainingPair;
use crate::error::{PfctError, Result};
use crate::model::ConsistencyFunction;

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Array2<f64> {
    let c = (WIN as f64 - 1.0) / 2.0;
    let mut w = Array2::from_shape_fn((WIN, WIN), |(i, j)| {
        let dy = i as f64 - c;
        let dx = j as f64 - c;
        (-(dy * dy + dx * dx) / (2.0 * SIGMA * SIGMA)).exp()
    });
    let sum = w.sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// Mean SSIM over all valid 11x11 window positions.
pub fn ssim(a: &Array2<f32>, b: &Array2<f32>, dynamic_range: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PfctError::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if !(dynamic_range > 0.0) {
        return Err(PfctError::invalid("dynamic_range must be positive"));
    }
    let (h, w) = a.dim();
    if h < WIN || w < WIN {
        return Err(PfctError::invalid(format!(
            "images {h}x{w} smaller than the {WIN}x{WIN} window"
        )));
    }
    let win = gaussian_window();
    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for oy in 0..=h - WIN {
        for ox in 0..=w - WIN {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for i in 0..WIN {
                for j in 0..WIN {
                    let g = win[[i, j]];
                    let x = a[[oy + i, ox + j]] as f64;
                    let y = b[[oy + i, ox + j]] as f64;
                    mu_a += g * x;
                    mu_b += g * y;
                    aa += g * x * x;
                    bb += g * y * y;
                    ab += g * x * y;
                }
            }
            let va = aa - mu_a * mu_a;
            let vb = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `10·log10(peak² / MSE)`; infinite when the images are identical.
pub fn psnr(a: &Array2<f32>, b: &Array2<f32>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PfctError::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if !(peak > 0.0) {
        return Err(PfctError::invalid("peak must be positive"));
    }
    let n = a.len() as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Per-image results for one evaluated split.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Mean/std over finite PSNR values only.
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub infinite_psnr_count: usize,
    /// Always 1 for single-step inference; asserted per image.
    pub nfe_per_image: u64,
    /// Source ids of images whose evaluation failed, with the error text.
    pub failures: Vec<String>,
}

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.clone().sum::<f64>() / n as f64;
    let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    fn from_parts(ssim: Vec<f64>, psnr: Vec<f64>, failures: Vec<String>) -> Self {
        let (ssim_mean, ssim_std) = mean_std(ssim.iter().cloned());
        let finite = psnr.iter().cloned().filter(|v| v.is_finite()).collect::<Vec<_>>();
        let infinite_psnr_count = psnr.len() - finite.len();
        let (psnr_mean, psnr_std) = mean_std(finite.iter().cloned());
        Self {
            ssim,
            psnr,
            ssim_mean,
            ssim_std,
            psnr_mean,
            psnr_std,
            infinite_psnr_count,
            nfe_per_image: 1,
            failures,
        }
    }

    /// One table row: `SSIM mean±std  PSNR mean±std  NFE`.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label}: SSIM {:.4} ± {:.4}  PSNR {:.2} ± {:.2} dB  NFE {}{}",
            self.ssim_mean,
            self.ssim_std,
            self.psnr_mean,
            self.psnr_std,
            self.nfe_per_image,
            if self.infinite_psnr_count > 0 {
                format!("  ({} infinite PSNR excluded)", self.infinite_psnr_count)
            } else {
                String::new()
            }
        )
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("index,ssim,psnr\n");
        for (i, (s, p)) in self.ssim.iter().zip(&self.psnr).enumerate() {
            out.push_str(&format!("{i},{s},{p}\n"));
        }
        out
    }
}

fn to_batch(img: &Array2<f32>) -> Array4<f32> {
    let (h, w) = img.dim();
    img.to_owned().into_shape_with_order((1, 1, h, w)).expect("reshape")
}

/// Denoise every pair in the split once and score against the clean target.
///
/// Per-image failures are collected rather than aborting the split; each
/// image is checked to have cost exactly one network evaluation.
pub fn evaluate_split<R: Rng>(
    f: &ConsistencyFunction<f32>,
    split: &[TrainingPair],
    sigma_star: f64,
    aug_dim: usize,
    dynamic_range: f64,
    rng: &mut R,
) -> Result<EvalReport> {
    let mut ssims = Vec::new();
    let mut psnrs = Vec::new();
    let mut failures = Vec::new();
    for pair in split {
        let y = to_batch(&pair.cond);
        f.reset_nfe();
        let denoised = match f.denoise(&y, sigma_star, aug_dim, rng) {
            Ok(d) => d,
            Err(e) => {
                failures.push(format!("{}: {e}", pair.source_id));
                continue;
            }
        };
        if f.nfe() != 1 {
            return Err(PfctError::invalid(format!(
                "{}: {} network evaluations for one image",
                pair.source_id,
                f.nfe()
            )));
        }
        let out = denoised.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
        match (ssim(&out, &pair.clean, dynamic_range), psnr(&out, &pair.clean, dynamic_range)) {
            (Ok(s), Ok(p)) => {
                ssims.push(s);
                psnrs.push(p);
            }
            (Err(e), _) | (_, Err(e)) => failures.push(format!("{}: {e}", pair.source_id)),
        }
    }
    Ok(EvalReport::from_parts(ssims, psnrs, failures))
}
