//! The consistency function and single-step denoising.
//!
//! The network never acts alone: its output is blended with the input through
//! noise-dependent coefficients so that at `σ = σ_min` the function is exactly
//! the identity regardless of the weights,
//!
//! ```text
//! f(x, σ, y) = c_skip(σ)·x + c_out(σ)·net(x, embed(σ), y)
//! c_skip(σ) = σ_data² / ((σ - σ_min)² + σ_data²)
//! c_out(σ)  = σ_data·(σ - σ_min) / √(σ_data² + σ²)
//! ```
//!
//! Single-step denoising perturbs the condition image to the inference noise
//! level with the perturbation kernel and evaluates the function once.
//!
//! The boundary condition holds for any parameters, trained or not:
//!
//! ```
//! use pfct::model::ConsistencyFunction;
//! use pfct::nn::NetworkConfig;
//! use pfct::rng::stream;
//! use ndarray::Array4;
//!
//! let cfg = NetworkConfig { base_channels: 4, depth: 2, noise_embedding_dim: 8, use_attention_gate: false };
//! let f: ConsistencyFunction<f64> =
//!     ConsistencyFunction::new(cfg, 0.002, 0.5, &mut stream(0, "model")).unwrap();
//! let x = Array4::from_elem((1, 1, 8, 8), 0.3);
//! let y = Array4::from_elem((1, 1, 8, 8), -0.2);
//! let out = f.apply(&x, &[f.sigma_min], &y).unwrap();
//! assert!((&out - &x).iter().all(|v| v.abs() < 1e-5));
//! ```

use std::cell::Cell;

use ndarray::{Array4, Axis};
use rand::Rng;

use crate::error::{PfctError, Result};
use crate::kernel::{sample_radius, sample_uniform_angle, AugmentedKernelSpec};
use crate::nn::{CondUNet, NetworkConfig, Scalar, UNetCache};

/// A conditional consistency function `f(x_σ, σ, y)` with structural boundary
/// condition and an NFE counter.
#[derive(Debug, Clone)]
pub struct ConsistencyFunction<T> {
    pub net: CondUNet<T>,
    pub sigma_min: f64,
    pub sigma_data: f64,
    nfe: Cell<u64>,
}

/// Cache returned by [`ConsistencyFunction::apply_cached`], enough to route a
/// loss gradient back to the parameters.
pub struct ApplyCache<T> {
    pub net_cache: UNetCache<T>,
    pub c_out: Vec<T>,
}

impl<T: Scalar> ConsistencyFunction<T> {
    pub fn new<R: Rng>(cfg: NetworkConfig, sigma_min: f64, sigma_data: f64, rng: &mut R) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_data > 0.0) {
            return Err(PfctError::invalid("sigma_min and sigma_data must be positive"));
        }
        Ok(Self { net: CondUNet::new(cfg, rng)?, sigma_min, sigma_data, nfe: Cell::new(0) })
    }

    pub fn from_net(net: CondUNet<T>, sigma_min: f64, sigma_data: f64) -> Self {
        Self { net, sigma_min, sigma_data, nfe: Cell::new(0) }
    }

    pub fn skip_coefficient(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / ((sigma - self.sigma_min).powi(2) + sd2)
    }

    pub fn out_coefficient(&self, sigma: f64) -> f64 {
        self.sigma_data * (sigma - self.sigma_min) / (self.sigma_data * self.sigma_data + sigma * sigma).sqrt()
    }

    /// Network function evaluations so far.
    pub fn nfe(&self) -> u64 {
        self.nfe.get()
    }

    pub fn reset_nfe(&self) {
        self.nfe.set(0);
    }

    fn check_sigmas(&self, sigmas: &[f64]) -> Result<()> {
        for s in sigmas {
            if *s < self.sigma_min || !s.is_finite() {
                return Err(PfctError::invalid(format!(
                    "sigma {s} below sigma_min {} or non-finite",
                    self.sigma_min
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the consistency function; exactly one network evaluation.
    pub fn apply(&self, x_sigma: &Array4<T>, sigmas: &[f64], y: &Array4<T>) -> Result<Array4<T>> {
        Ok(self.apply_cached(x_sigma, sigmas, y)?.0)
    }

    /// Like [`Self::apply`] but also returns the backward cache.
    pub fn apply_cached(
        &self,
        x_sigma: &Array4<T>,
        sigmas: &[f64],
        y: &Array4<T>,
    ) -> Result<(Array4<T>, ApplyCache<T>)> {
        self.check_sigmas(sigmas)?;
        let sig_t: Vec<T> = sigmas.iter().map(|s| T::of_f64(*s)).collect();
        let (net_out, net_cache) = self.net.forward(x_sigma, &sig_t, y)?;
        self.nfe.set(self.nfe.get() + 1);
        let mut out = Array4::zeros(x_sigma.dim());
        let mut c_out_v = Vec::with_capacity(sigmas.len());
        for (b, s) in sigmas.iter().enumerate() {
            let cs = T::of_f64(self.skip_coefficient(*s));
            let co = T::of_f64(self.out_coefficient(*s));
            c_out_v.push(co);
            let xb = x_sigma.index_axis(Axis(0), b);
            let nb = net_out.index_axis(Axis(0), b);
            let mut ob = out.index_axis_mut(Axis(0), b);
            ob.assign(&(&xb * cs + &nb * co));
        }
        Ok((out, ApplyCache { net_cache, c_out: c_out_v }))
    }

    /// Route an output gradient through the blend and the network into
    /// parameter gradients.
    pub fn backward(&self, cache: &ApplyCache<T>, g_out: &Array4<T>, grads: &mut CondUNet<T>) {
        let mut g_net = g_out.clone();
        for (b, co) in cache.c_out.iter().enumerate() {
            g_net.index_axis_mut(Axis(0), b).mapv_inplace(|v| v * *co);
        }
        self.net.backward(&cache.net_cache, &g_net, grads);
    }

    /// Single-step denoising of a condition image: perturb to `sigma_star`
    /// with the kernel (identity when `sigma_star == sigma_min`) and apply
    /// the function once.
    pub fn denoise<R: Rng>(
        &self,
        y: &Array4<T>,
        sigma_star: f64,
        aug_dim: usize,
        rng: &mut R,
    ) -> Result<Array4<T>> {
        if !self.net.all_finite() {
            return Err(PfctError::NonFinite("model parameters contain NaN/Inf".into()));
        }
        if sigma_star < self.sigma_min {
            return Err(PfctError::invalid(format!(
                "sigma_star {sigma_star} below sigma_min {}",
                self.sigma_min
            )));
        }
        let (n, _, h, w) = y.dim();
        let pixels = h * w;
        let mut x_star = y.clone();
        if sigma_star > self.sigma_min {
            let spec = AugmentedKernelSpec::new(pixels, aug_dim, sigma_star)?;
            for b in 0..n {
                let angle = sample_uniform_angle(pixels, rng)?;
                let radius = sample_radius(&spec, 1, rng)?[0];
                let mut xb = x_star.index_axis_mut(Axis(0), b);
                let flat = xb.as_slice_mut().unwrap();
                for (px, a) in flat.iter_mut().zip(&angle) {
                    *px = *px + T::of_f64(a * radius);
                }
            }
        }
        let sigmas = vec![sigma_star.max(self.sigma_min); n];
        self.apply(&x_star, &sigmas, y)
    }
}
