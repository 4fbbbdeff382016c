//! The conditional U-Net backbone and its backward pass.

use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    avgpool2, avgpool2_backward, concat_channels, sigmoid, silu, silu_backward, sinusoidal_embedding,
    split_channels_grad, upsample2, upsample2_backward, Conv2d, Linear,
};
use super::Scalar;
use crate::error::{PfctError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub use_attention_gate: bool,
    pub noise_embedding_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { base_channels: 32, depth: 3, use_attention_gate: false, noise_embedding_dim: 64 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 {
            return Err(PfctError::invalid("base_channels and depth must be >= 1"));
        }
        if self.noise_embedding_dim < 2 || self.noise_embedding_dim % 2 != 0 {
            return Err(PfctError::invalid("noise_embedding_dim must be even and >= 2"));
        }
        Ok(())
    }

    /// Encoder width at level `l`: doubles once after the top level, then
    /// stays flat to keep the desk-scale step cheap.
    fn enc_width(&self, l: usize) -> usize {
        if l == 0 {
            self.base_channels
        } else {
            2 * self.base_channels
        }
    }

    /// Decoder width at level `l`.
    fn dec_width(&self, l: usize) -> usize {
        if l == 0 {
            self.enc_width(0)
        } else {
            self.enc_width(l - 1)
        }
    }
}

/// Additive attention gate on one skip connection.
#[derive(Debug, Clone)]
struct AttnGate<T> {
    proj_skip: Conv2d<T>,
    proj_up: Conv2d<T>,
    head: Conv2d<T>,
}

/// Forward-pass intermediates needed by [`CondUNet::backward`].
pub struct UNetCache<T> {
    emb_sin: Array2<T>,
    emb_pre: Array2<T>,
    emb_act: Array2<T>,
    enc_in: Vec<Array4<T>>,
    enc_z: Vec<Array4<T>>,
    skips: Vec<Array4<T>>,
    mid_in: Array4<T>,
    mid_z: Array4<T>,
    ups: Vec<Array4<T>>,
    gate_pre: Vec<Array4<T>>,
    gate_act: Vec<Array4<T>>,
    gate_map: Vec<Array4<T>>,
    cats: Vec<Array4<T>>,
    red_z: Vec<Array4<T>>,
    red_act: Vec<Array4<T>>,
    dec_z: Vec<Array4<T>>,
    out_in: Array4<T>,
}

/// Conditional image-to-image U-Net: input channels are the noisy image and
/// the condition, downsampling via mean pooling, upsampling nearest-neighbour
/// with skip concatenation, noise level injected as a per-channel bias from a
/// sinusoidal embedding of `ln σ`.
#[derive(Debug, Clone)]
pub struct CondUNet<T> {
    pub cfg: NetworkConfig,
    emb_lin: Linear<T>,
    enc: Vec<Conv2d<T>>,
    enc_emb: Vec<Linear<T>>,
    mid: Conv2d<T>,
    mid_emb: Linear<T>,
    dec_reduce: Vec<Conv2d<T>>,
    dec_conv: Vec<Conv2d<T>>,
    dec_emb: Vec<Linear<T>>,
    gates: Vec<AttnGate<T>>,
    out: Conv2d<T>,
}

impl<T: Scalar> CondUNet<T> {
    pub fn new<R: Rng>(cfg: NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ed = cfg.noise_embedding_dim;
        let depth = cfg.depth;
        let emb_lin = Linear::new(ed, ed, 1.0, rng);
        let mut enc = Vec::new();
        let mut enc_emb = Vec::new();
        for l in 0..depth {
            let cin = if l == 0 { 2 } else { cfg.enc_width(l - 1) };
            enc.push(Conv2d::new(cin, cfg.enc_width(l), 3, 1.0, rng));
            enc_emb.push(Linear::new(ed, cfg.enc_width(l), 0.1, rng));
        }
        let mid_ch = cfg.enc_width(depth - 1);
        let mid = Conv2d::new(mid_ch, mid_ch, 3, 1.0, rng);
        let mid_emb = Linear::new(ed, mid_ch, 0.1, rng);
        let mut dec_reduce = Vec::new();
        let mut dec_conv = Vec::new();
        let mut dec_emb = Vec::new();
        let mut gates = Vec::new();
        for l in 0..depth {
            let up_ch = if l == depth - 1 { mid_ch } else { cfg.dec_width(l + 1) };
            let cat = cfg.enc_width(l) + up_ch;
            let d = cfg.dec_width(l);
            dec_reduce.push(Conv2d::new(cat, d, 1, 1.0, rng));
            dec_conv.push(Conv2d::new(d, d, 3, 1.0, rng));
            dec_emb.push(Linear::new(ed, d, 0.1, rng));
            if cfg.use_attention_gate {
                let g = (cfg.enc_width(l) / 2).max(1);
                gates.push(AttnGate {
                    proj_skip: Conv2d::new(cfg.enc_width(l), g, 1, 1.0, rng),
                    proj_up: Conv2d::new(up_ch, g, 1, 1.0, rng),
                    head: Conv2d::new(g, 1, 1, 1.0, rng),
                });
            }
        }
        // zero-initialized head: an untrained network contributes nothing, so
        // the consistency function starts at the skip path
        let out = Conv2d::new(cfg.dec_width(0), 1, 1, 0.0, rng);
        Ok(Self { cfg, emb_lin, enc, enc_emb, mid, mid_emb, dec_reduce, dec_conv, dec_emb, gates, out })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            emb_lin: self.emb_lin.zeros_like(),
            enc: self.enc.iter().map(Conv2d::zeros_like).collect(),
            enc_emb: self.enc_emb.iter().map(Linear::zeros_like).collect(),
            mid: self.mid.zeros_like(),
            mid_emb: self.mid_emb.zeros_like(),
            dec_reduce: self.dec_reduce.iter().map(Conv2d::zeros_like).collect(),
            dec_conv: self.dec_conv.iter().map(Conv2d::zeros_like).collect(),
            dec_emb: self.dec_emb.iter().map(Linear::zeros_like).collect(),
            gates: self
                .gates
                .iter()
                .map(|g| AttnGate {
                    proj_skip: g.proj_skip.zeros_like(),
                    proj_up: g.proj_up.zeros_like(),
                    head: g.head.zeros_like(),
                })
                .collect(),
            out: self.out.zeros_like(),
        }
    }

    fn check_shapes(&self, x: &Array4<T>, sigmas: &[T], y: &Array4<T>) -> Result<()> {
        if x.dim() != y.dim() {
            return Err(PfctError::ShapeMismatch(format!("x {:?} vs y {:?}", x.dim(), y.dim())));
        }
        let (n, c, h, w) = x.dim();
        if c != 1 {
            return Err(PfctError::ShapeMismatch(format!("expected single-channel images, got {c}")));
        }
        if n != sigmas.len() {
            return Err(PfctError::ShapeMismatch(format!("batch {n} vs {} sigmas", sigmas.len())));
        }
        let div = 1 << self.cfg.depth;
        if h % div != 0 || w % div != 0 {
            return Err(PfctError::ShapeMismatch(format!(
                "spatial dims {h}x{w} must be divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }

    /// Forward pass; returns the raw network output and the cache for
    /// [`Self::backward`].
    pub fn forward(&self, x: &Array4<T>, sigmas: &[T], y: &Array4<T>) -> Result<(Array4<T>, UNetCache<T>)> {
        self.check_shapes(x, sigmas, y)?;
        let depth = self.cfg.depth;
        let emb_sin = sinusoidal_embedding(sigmas, self.cfg.noise_embedding_dim);
        let emb_pre = self.emb_lin.forward(&emb_sin);
        let emb_act = emb_pre.mapv(|v| v * sigmoid(v));

        let mut h = concat_channels(x, y);
        let mut enc_in = Vec::with_capacity(depth);
        let mut enc_z = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            if l > 0 {
                h = avgpool2(&h);
            }
            enc_in.push(h.clone());
            let mut z = self.enc[l].forward(&h);
            add_channel_bias(&mut z, &self.enc_emb[l].forward(&emb_act));
            h = silu(&z);
            enc_z.push(z);
            skips.push(h.clone());
        }
        let mid_in = avgpool2(&h);
        let mut mid_z = self.mid.forward(&mid_in);
        add_channel_bias(&mut mid_z, &self.mid_emb.forward(&emb_act));
        h = silu(&mid_z);

        let mut ups = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut gate_pre = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut gate_act = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut gate_map = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut cats = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut red_z = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut red_act = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut dec_z = vec![Array4::zeros((0, 0, 0, 0)); depth];
        for l in (0..depth).rev() {
            let up = upsample2(&h);
            let skip = if self.cfg.use_attention_gate {
                let gate = &self.gates[l];
                let pre = &gate.proj_skip.forward(&skips[l]) + &gate.proj_up.forward(&up);
                let act = silu(&pre);
                let map = gate.head.forward(&act).mapv(sigmoid);
                let gated = &skips[l] * &map; // map broadcasts over channels
                gate_pre[l] = pre;
                gate_act[l] = act;
                gate_map[l] = map;
                gated
            } else {
                skips[l].clone()
            };
            let cat = concat_channels(&skip, &up);
            ups[l] = up;
            let rz = self.dec_reduce[l].forward(&cat);
            let ra = silu(&rz);
            let mut z = self.dec_conv[l].forward(&ra);
            add_channel_bias(&mut z, &self.dec_emb[l].forward(&emb_act));
            h = silu(&z);
            cats[l] = cat;
            red_z[l] = rz;
            red_act[l] = ra;
            dec_z[l] = z;
        }
        let out_in = h;
        let out = self.out.forward(&out_in);
        let cache = UNetCache {
            emb_sin,
            emb_pre,
            emb_act,
            enc_in,
            enc_z,
            skips,
            mid_in,
            mid_z,
            ups,
            gate_pre,
            gate_act,
            gate_map,
            cats,
            red_z,
            red_act,
            dec_z,
            out_in,
        };
        Ok((out, cache))
    }

    /// Backward pass; accumulates parameter gradients into `grads` (a
    /// zeros-like mirror of `self`).
    pub fn backward(&self, cache: &UNetCache<T>, g_out: &Array4<T>, grads: &mut Self) {
        let depth = self.cfg.depth;
        let mut g_emb_act: Array2<T> = Array2::zeros(cache.emb_act.dim());
        let mut skip_grads: Vec<Option<Array4<T>>> = (0..depth).map(|_| None).collect();

        let mut g = self
            .out
            .backward(&cache.out_in, g_out, &mut grads.out);
        // decoder, bottom-up in forward order means l ascending here
        for l in 0..depth {
            let gz = silu_backward(&cache.dec_z[l], &g);
            accumulate_channel_bias_grad(&gz, &cache.emb_act, &self.dec_emb[l], &mut grads.dec_emb[l], &mut g_emb_act);
            let g_ra = self.dec_conv[l].backward(&cache.red_act[l], &gz, &mut grads.dec_conv[l]);
            let g_rz = silu_backward(&cache.red_z[l], &g_ra);
            let g_cat = self.dec_reduce[l].backward(&cache.cats[l], &g_rz, &mut grads.dec_reduce[l]);
            let skip_ch = self.cfg.enc_width(l);
            let (g_skip_gated, g_up) = split_channels_grad(&g_cat, skip_ch);
            let (g_skip, g_up) = if self.cfg.use_attention_gate {
                let gate = &self.gates[l];
                let map = &cache.gate_map[l];
                // gated = skip ⊙ map (map broadcast over channels)
                let g_skip_direct = &g_skip_gated * map;
                let g_map = (&g_skip_gated * &cache.skips[l]).sum_axis(Axis(1)).insert_axis(Axis(1));
                let g_head_pre = &g_map * &map.mapv(|m| m * (T::one() - m));
                let g_act = gate.head.backward(
                    &cache.gate_act[l],
                    &g_head_pre,
                    &mut grads.gates[l].head,
                );
                let g_pre = silu_backward(&cache.gate_pre[l], &g_act);
                let g_skip_proj = gate.proj_skip.backward(
                    &cache.skips[l],
                    &g_pre,
                    &mut grads.gates[l].proj_skip,
                );
                let g_up_proj = gate.proj_up.backward(
                    &cache.ups[l],
                    &g_pre,
                    &mut grads.gates[l].proj_up,
                );
                (g_skip_direct + g_skip_proj, g_up + g_up_proj)
            } else {
                (g_skip_gated, g_up)
            };
            // held for the encoder sweep
            skip_grads[l] = Some(g_skip);
            g = upsample2_backward(&g_up);
        }
        // mid block: g currently holds the gradient w.r.t. silu(mid_z)
        let gz = silu_backward(&cache.mid_z, &g);
        accumulate_channel_bias_grad(&gz, &cache.emb_act, &self.mid_emb, &mut grads.mid_emb, &mut g_emb_act);
        let g_mid_in = self.mid.backward(&cache.mid_in, &gz, &mut grads.mid);
        let (h0, w0) = {
            let d = cache.skips[depth - 1].dim();
            (d.2, d.3)
        };
        let mut g_h = avgpool2_backward(&g_mid_in, h0, w0);
        // encoder, reverse order, folding in the stashed skip gradients
        for l in (0..depth).rev() {
            let g_skip = skip_grads[l].take().expect("skip gradient present");
            let g_total = g_h + g_skip;
            let gz = silu_backward(&cache.enc_z[l], &g_total);
            accumulate_channel_bias_grad(&gz, &cache.emb_act, &self.enc_emb[l], &mut grads.enc_emb[l], &mut g_emb_act);
            let g_in = self.enc[l].backward(&cache.enc_in[l], &gz, &mut grads.enc[l]);
            if l > 0 {
                let d = cache.enc_in[l - 1].dim();
                g_h = avgpool2_backward(&g_in, d.2, d.3);
            } else {
                g_h = g_in; // gradient w.r.t. concat(x, y); unused
            }
        }
        let _ = g_h;
        // embedding MLP
        let g_emb_pre = {
            let mut g = g_emb_act;
            g.zip_mut_with(&cache.emb_pre, |gv, &v| {
                let s = sigmoid(v);
                *gv = *gv * (s * (T::one() + v * (T::one() - s)));
            });
            g
        };
        self.emb_lin
            .backward(&cache.emb_sin, &g_emb_pre, &mut grads.emb_lin);
    }

    /// All parameter tensors as flat slices, in a fixed order shared with
    /// [`Self::param_slices_mut`] and the checkpoint format.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        out.push(self.emb_lin.w.as_slice().unwrap());
        out.push(self.emb_lin.b.as_slice().unwrap());
        for (c, e) in self.enc.iter().zip(&self.enc_emb) {
            out.push(c.w.as_slice().unwrap());
            out.push(c.b.as_slice().unwrap());
            out.push(e.w.as_slice().unwrap());
            out.push(e.b.as_slice().unwrap());
        }
        out.push(self.mid.w.as_slice().unwrap());
        out.push(self.mid.b.as_slice().unwrap());
        out.push(self.mid_emb.w.as_slice().unwrap());
        out.push(self.mid_emb.b.as_slice().unwrap());
        for l in 0..self.dec_conv.len() {
            out.push(self.dec_reduce[l].w.as_slice().unwrap());
            out.push(self.dec_reduce[l].b.as_slice().unwrap());
            out.push(self.dec_conv[l].w.as_slice().unwrap());
            out.push(self.dec_conv[l].b.as_slice().unwrap());
            out.push(self.dec_emb[l].w.as_slice().unwrap());
            out.push(self.dec_emb[l].b.as_slice().unwrap());
        }
        for g in &self.gates {
            out.push(g.proj_skip.w.as_slice().unwrap());
            out.push(g.proj_skip.b.as_slice().unwrap());
            out.push(g.proj_up.w.as_slice().unwrap());
            out.push(g.proj_up.b.as_slice().unwrap());
            out.push(g.head.w.as_slice().unwrap());
            out.push(g.head.b.as_slice().unwrap());
        }
        out.push(self.out.w.as_slice().unwrap());
        out.push(self.out.b.as_slice().unwrap());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.emb_lin.w.as_slice_mut().unwrap());
        out.push(self.emb_lin.b.as_slice_mut().unwrap());
        for (c, e) in self.enc.iter_mut().zip(self.enc_emb.iter_mut()) {
            out.push(c.w.as_slice_mut().unwrap());
            out.push(c.b.as_slice_mut().unwrap());
            out.push(e.w.as_slice_mut().unwrap());
            out.push(e.b.as_slice_mut().unwrap());
        }
        out.push(self.mid.w.as_slice_mut().unwrap());
        out.push(self.mid.b.as_slice_mut().unwrap());
        out.push(self.mid_emb.w.as_slice_mut().unwrap());
        out.push(self.mid_emb.b.as_slice_mut().unwrap());
        for ((r, c), e) in self
            .dec_reduce
            .iter_mut()
            .zip(self.dec_conv.iter_mut())
            .zip(self.dec_emb.iter_mut())
        {
            out.push(r.w.as_slice_mut().unwrap());
            out.push(r.b.as_slice_mut().unwrap());
            out.push(c.w.as_slice_mut().unwrap());
            out.push(c.b.as_slice_mut().unwrap());
            out.push(e.w.as_slice_mut().unwrap());
            out.push(e.b.as_slice_mut().unwrap());
        }
        for g in self.gates.iter_mut() {
            out.push(g.proj_skip.w.as_slice_mut().unwrap());
            out.push(g.proj_skip.b.as_slice_mut().unwrap());
            out.push(g.proj_up.w.as_slice_mut().unwrap());
            out.push(g.proj_up.b.as_slice_mut().unwrap());
            out.push(g.head.w.as_slice_mut().unwrap());
            out.push(g.head.b.as_slice_mut().unwrap());
        }
        out.push(self.out.w.as_slice_mut().unwrap());
        out.push(self.out.b.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// `z[b, c, :, :] += bias[b, c]`.
fn add_channel_bias<T: Scalar>(z: &mut Array4<T>, bias: &Array2<T>) {
    let (n, c, _, _) = z.dim();
    debug_assert_eq!(bias.dim(), (n, c));
    for b in 0..n {
        for ci in 0..c {
            let v = bias[[b, ci]];
            z.index_axis_mut(Axis(0), b).index_axis_mut(Axis(0), ci).mapv_inplace(|x| x + v);
        }
    }
}

/// Gradient of [`add_channel_bias`] routed through the per-block embedding
/// projection; also accumulates into the shared embedding-activation grad.
fn accumulate_channel_bias_grad<T: Scalar>(
    gz: &Array4<T>,
    emb_act: &Array2<T>,
    proj: &Linear<T>,
    gproj: &mut Linear<T>,
    g_emb_act: &mut Array2<T>,
) {
    let (n, c, _, _) = gz.dim();
    let mut g_bias = Array2::zeros((n, c));
    for b in 0..n {
        for ci in 0..c {
            g_bias[[b, ci]] = gz.index_axis(Axis(0), b).index_axis(Axis(0), ci).sum();
        }
    }
    let g = proj.backward(emb_act, &g_bias, gproj);
    *g_emb_act += &g;
}
