//! Layer primitives: conv, pooling, activation, linear, noise embedding.
//!
//! Activations are `(batch, channels, height, width)` arrays in standard
//! layout. Convolutions support stride 1 with kernel 3 (pad 1) or kernel 1
//! (pad 0), which is all the U-Net needs.

use ndarray::{s, Array1, Array2, Array4, ArrayView3, ArrayViewMut3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Scalar;

/// Expand one image `(C, H, W)` into a `(C·k·k, H·W)` patch matrix.
pub fn im2col<T: Scalar>(x: ArrayView3<T>, k: usize, col: &mut Array2<T>) {
    let (c, h, w) = x.dim();
    let pad = k / 2;
    debug_assert_eq!(col.dim(), (c * k * k, h * w));
    col.fill(T::zero());
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad - dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y as isize + dy as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = x.slice(s![ci, iy as usize, (x_lo + dx - pad)..(x_hi + dx - pad)]);
                    let mut dst = col.slice_mut(s![row, (y * w + x_lo)..(y * w + x_hi)]);
                    dst.assign(&src);
                }
            }
        }
    }
}

/// Accumulate a `(C·k·k, H·W)` patch-gradient matrix back into an image
/// gradient `(C, H, W)`. Inverse scatter of [`im2col`].
fn col2im_accumulate<T: Scalar>(col: &Array2<T>, k: usize, mut gx: ArrayViewMut3<T>) {
    let (c, h, w) = gx.dim();
    let pad = k / 2;
    debug_assert_eq!(col.dim(), (c * k * k, h * w));
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad - dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y as isize + dy as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = col.slice(s![row, (y * w + x_lo)..(y * w + x_hi)]);
                    let mut dst = gx.slice_mut(s![ci, iy as usize, (x_lo + dx - pad)..(x_hi + dx - pad)]);
                    dst += &src;
                }
            }
        }
    }
}

/// Stride-1 convolution with square kernel 1 or 3.
///
/// Weights are stored flattened as `(c_out, c_in·k·k)` so forward and both
/// backward products are single GEMMs per batch element.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// He-style init: `std = gain·√(2/(c_in·k·k))`. `gain = 0` zero-initializes
    /// (used for the output head so the untrained network is the identity map
    /// through the skip coefficient).
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, gain: f64, rng: &mut R) -> Self {
        assert!(k == 1 || k == 3, "only k = 1 or 3 supported");
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let w = Array2::from_shape_fn((cout, cin * k * k), |_| {
            T::of_f64(rng.sample::<f64, _>(StandardNormal) * std)
        });
        let b = Array1::zeros(cout);
        Self { w, b, cin, cout, k }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.dim()),
            cin: self.cin,
            cout: self.cout,
            k: self.k,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (n, cin, h, w) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let mut y = Array4::zeros((n, self.cout, h, w));
        let mut col = Array2::zeros((cin * self.k * self.k, h * w));
        for bi in 0..n {
            im2col(x.index_axis(Axis(0), bi), self.k, &mut col);
            let mut y2 = self.w.dot(&col);
            y2 += &self.b.view().insert_axis(Axis(1));
            y.index_axis_mut(Axis(0), bi)
                .assign(&y2.into_shape_with_order((self.cout, h, w)).unwrap());
        }
        y
    }

    /// Returns the input gradient; accumulates weight/bias gradients into the
    /// zeros-like mirror layer.
    pub fn backward(&self, x: &Array4<T>, gy: &Array4<T>, grad: &mut Self) -> Array4<T> {
        let (n, cin, h, w) = x.dim();
        let hw = h * w;
        let mut gx = Array4::zeros((n, cin, h, w));
        let mut col = Array2::zeros((cin * self.k * self.k, hw));
        for bi in 0..n {
            let gy2 = gy
                .index_axis(Axis(0), bi)
                .to_shape((self.cout, hw))
                .unwrap()
                .to_owned();
            im2col(x.index_axis(Axis(0), bi), self.k, &mut col);
            grad.w += &gy2.dot(&col.t());
            grad.b += &gy2.sum_axis(Axis(1));
            let gcol = self.w.t().dot(&gy2);
            col2im_accumulate(&gcol, self.k, gx.index_axis_mut(Axis(0), bi));
        }
        gx
    }
}

/// Fully connected layer on `(batch, features)`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
            T::of_f64(rng.sample::<f64, _>(StandardNormal) * std)
        });
        Self { w, b: Array1::zeros(fan_out) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.dim()), b: Array1::zeros(self.b.dim()) }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w.t());
        y += &self.b.view().insert_axis(Axis(0));
        y
    }

    pub fn backward(&self, x: &Array2<T>, gy: &Array2<T>, grad: &mut Self) -> Array2<T> {
        grad.w += &gy.t().dot(x);
        grad.b += &gy.sum_axis(Axis(0));
        gy.dot(&self.w)
    }
}

/// SiLU `x·σ(x)` applied elementwise.
pub fn silu<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward<T: Scalar>(x: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        let s = sigmoid(v);
        *g = *g * (s * (T::one() + v * (T::one() - s)));
    });
    gx
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// 2×2 mean pooling.
pub fn avgpool2<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool needs even spatial dims");
    let quarter = T::of_f64(0.25);
    Array4::from_shape_fn((n, c, h / 2, w / 2), |(b, ci, y, xo)| {
        (x[[b, ci, 2 * y, 2 * xo]]
            + x[[b, ci, 2 * y, 2 * xo + 1]]
            + x[[b, ci, 2 * y + 1, 2 * xo]]
            + x[[b, ci, 2 * y + 1, 2 * xo + 1]])
            * quarter
    })
}

pub fn avgpool2_backward<T: Scalar>(gy: &Array4<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c, hy, wy) = gy.dim();
    assert_eq!((hy * 2, wy * 2), (h, w));
    let quarter = T::of_f64(0.25);
    Array4::from_shape_fn((n, c, h, w), |(b, ci, y, xo)| gy[[b, ci, y / 2, xo / 2]] * quarter)
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(b, ci, y, xo)| x[[b, ci, y / 2, xo / 2]])
}

pub fn upsample2_backward<T: Scalar>(gy: &Array4<T>) -> Array4<T> {
    let (n, c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for b in 0..n {
        for ci in 0..c {
            for y in 0..h2 {
                for xo in 0..w2 {
                    gx[[b, ci, y / 2, xo / 2]] = gx[[b, ci, y / 2, xo / 2]] + gy[[b, ci, y, xo]];
                }
            }
        }
    }
    gx
}

/// Concatenate along the channel axis, `a` first.
pub fn concat_channels<T: Scalar>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("channel concat")
}

/// Split a concat gradient back into the two operands' gradients.
pub fn split_channels_grad<T: Scalar>(g: &Array4<T>, ca: usize) -> (Array4<T>, Array4<T>) {
    let ga = g.slice(s![.., ..ca, .., ..]).to_owned();
    let gb = g.slice(s![.., ca.., .., ..]).to_owned();
    (ga, gb)
}

/// Sinusoidal positional embedding of `ln σ`, one row per batch element.
///
/// Half the dimensions carry sines, half cosines, with log-spaced frequencies
/// from 1 down to 1e-4; scale-robust across the whole sigma range.
pub fn sinusoidal_embedding<T: Scalar>(sigmas: &[T], dim: usize) -> Array2<T> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
    let half = dim / 2;
    let mut out = Array2::zeros((sigmas.len(), dim));
    for (bi, sigma) in sigmas.iter().enumerate() {
        let t = sigma.into_f64().ln();
        for j in 0..half {
            let freq = if half == 1 {
                1.0
            } else {
                (-(10_000f64.ln()) * j as f64 / (half - 1) as f64).exp()
            };
            out[[bi, j]] = T::of_f64((t * freq).sin());
            out[[bi, half + j]] = T::of_f64((t * freq).cos());
        }
    }
    out
}
