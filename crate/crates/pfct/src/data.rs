//! Synthetic phantom pairs, paired-dataset ingestion, and the crop and
//! normalization protocol.
//!
//! Phantoms stand in for licensed clinical data: a random multi-ellipse
//! attenuation map in synthetic HU, normalized to `[-1, 1]`, paired with a
//! low-dose condition image. Dose reduction is modelled in the image domain
//! as spatially correlated Gaussian noise with
//!
//! ```text
//! σ_total² = floor² + quantum²·(1/dose − 1)
//! ```
//!
//! so a full-dose pair with zero floor reproduces the clean image exactly
//! and the quantum term grows as 1/dose for small dose fractions.
//!
//! ```
//! use pfct::data::{denormalize_hu, noise_sigma, normalize_hu};
//! use ndarray::Array2;
//!
//! let s = noise_sigma(0.25, 0.01, 0.08);
//! assert!((s - 0.1389).abs() < 1e-3);
//! // at full dose only the floor remains
//! assert_eq!(noise_sigma(1.0, 0.0, 0.08), 0.0);
//!
//! let hu = Array2::from_shape_vec((1, 3), vec![-1000.0, 0.0, 1000.0]).unwrap();
//! let n = normalize_hu(&hu, (-1000.0, 1000.0)).unwrap();
//! assert_eq!(n.as_slice().unwrap(), &[-1.0, 0.0, 1.0]);
//! let back = denormalize_hu(&n, (-1000.0, 1000.0)).unwrap();
//! assert_eq!(back[[0, 1]], 0.0);
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PfctError, Result};

/// One clean/condition image pair in normalized units.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    /// Full-dose target `x`, values in `[-1, 1]`.
    pub clean: Array2<f32>,
    /// Low-dose condition `y`, values in `[-1, 1]`.
    pub cond: Array2<f32>,
    pub source_id: String,
    /// Top-left offset of the crop this pair was taken from.
    pub crop_offset: (usize, usize),
}

impl TrainingPair {
    pub fn check(&self) -> Result<()> {
        if self.clean.dim() != self.cond.dim() {
            return Err(PfctError::ShapeMismatch(format!(
                "{}: clean {:?} vs cond {:?}",
                self.source_id,
                self.clean.dim(),
                self.cond.dim()
            )));
        }
        for v in self.clean.iter().chain(self.cond.iter()) {
            if !v.is_finite() || !(-1.0..=1.0).contains(v) {
                return Err(PfctError::Dataset(format!(
                    "{}: value {v} outside [-1, 1]",
                    self.source_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Image side; must be divisible by 8 to pass through the default net.
    pub side: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Inserted-ellipse attenuation range in synthetic HU.
    pub attenuation_lo: f64,
    pub attenuation_hi: f64,
    /// Fraction of full dose in `(0, 1]`.
    pub dose_fraction: f64,
    /// Dose-independent electronic noise floor, normalized units.
    pub noise_floor: f64,
    /// Quantum noise scale, normalized units.
    pub quantum_noise: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            side: 64,
            min_ellipses: 4,
            max_ellipses: 10,
            attenuation_lo: -700.0,
            attenuation_hi: 800.0,
            dose_fraction: 0.25,
            noise_floor: 0.01,
            quantum_noise: 0.08,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 16 || self.side % 8 != 0 {
            return Err(PfctError::invalid("side must be >= 16 and divisible by 8"));
        }
        if self.min_ellipses == 0 || self.max_ellipses < self.min_ellipses {
            return Err(PfctError::invalid("need 1 <= min_ellipses <= max_ellipses"));
        }
        if !(self.attenuation_lo < self.attenuation_hi) {
            return Err(PfctError::invalid("attenuation range must be nonempty"));
        }
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(PfctError::invalid(format!(
                "dose_fraction {} outside (0, 1]",
                self.dose_fraction
            )));
        }
        if self.noise_floor < 0.0 || self.quantum_noise < 0.0 {
            return Err(PfctError::invalid("noise parameters must be nonnegative"));
        }
        Ok(())
    }
}

/// Total noise standard deviation of the dose model, normalized units.
pub fn noise_sigma(dose_fraction: f64, floor: f64, quantum: f64) -> f64 {
    (floor * floor + quantum * quantum * (1.0 / dose_fraction - 1.0)).sqrt()
}

/// Zero-mean Gaussian field with per-pixel standard deviation `sigma`,
/// correlated by a fixed 3x3 binomial kernel scaled to unit L2 norm so the
/// marginal variance is preserved.
pub fn correlated_noise_field<R: Rng>(h: usize, w: usize, sigma: f64, rng: &mut R) -> Array2<f32> {
    let white = Array2::from_shape_fn((h, w), |_| rng.sample::<f64, _>(StandardNormal));
    let k = [1.0f64, 2.0, 1.0];
    let norm = {
        let mut s = 0.0;
        for a in k {
            for b in k {
                s += (a * b) * (a * b);
            }
        }
        s.sqrt()
    };
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (di, ka) in k.iter().enumerate() {
                for (dj, kb) in k.iter().enumerate() {
                    let ii = i as isize + di as isize - 1;
                    let jj = j as isize + dj as isize - 1;
                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                        acc += ka * kb * white[[ii as usize, jj as usize]];
                    }
                }
            }
            out[[i, j]] = (acc / norm * sigma) as f32;
        }
    }
    out
}

/// Render a multi-ellipse phantom in HU: air background, a water body
/// ellipse, then random inserts that overwrite what they cover.
fn render_phantom_hu<R: Rng>(cfg: &PhantomConfig, rng: &mut R) -> Array2<f64> {
    let s = cfg.side as f64;
    let mut img = Array2::from_elem((cfg.side, cfg.side), -1000.0f64);
    let body = (
        s * 0.5 + rng.gen_range(-0.03..0.03) * s,
        s * 0.5 + rng.gen_range(-0.03..0.03) * s,
        s * rng.gen_range(0.36..0.45),
        s * rng.gen_range(0.32..0.42),
        rng.gen_range(-0.3..0.3f64),
    );
    fill_ellipse(&mut img, body, 0.0);
    let count = rng.gen_range(cfg.min_ellipses..=cfg.max_ellipses);
    for _ in 0..count {
        let e = (
            body.0 + rng.gen_range(-0.6..0.6) * body.2,
            body.1 + rng.gen_range(-0.6..0.6) * body.3,
            s * rng.gen_range(0.04..0.18),
            s * rng.gen_range(0.04..0.18),
            rng.gen_range(-1.6..1.6f64),
        );
        let hu = rng.gen_range(cfg.attenuation_lo..cfg.attenuation_hi);
        fill_ellipse(&mut img, e, hu);
    }
    img
}

/// `e = (cy, cx, a, b, theta)`: interior of the rotated ellipse set to `hu`.
fn fill_ellipse(img: &mut Array2<f64>, e: (f64, f64, f64, f64, f64), hu: f64) {
    let (h, w) = img.dim();
    let (cy, cx, a, b, th) = e;
    let (sin, cos) = th.sin_cos();
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 + 0.5 - cy;
            let dx = j as f64 + 0.5 - cx;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                img[[i, j]] = hu;
            }
        }
    }
}

/// Generate one phantom pair at the configured dose.
pub fn make_phantom_pair<R: Rng>(
    cfg: &PhantomConfig,
    id: &str,
    rng: &mut R,
) -> Result<TrainingPair> {
    cfg.validate()?;
    let hu = render_phantom_hu(cfg, rng);
    let clean = normalize_hu(&hu, (-1000.0, 1000.0))?;
    let sigma = noise_sigma(cfg.dose_fraction, cfg.noise_floor, cfg.quantum_noise);
    let cond = if sigma == 0.0 {
        clean.clone()
    } else {
        let noise = correlated_noise_field(cfg.side, cfg.side, sigma, rng);
        let mut y = &clean + &noise;
        y.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        y
    };
    let pair = TrainingPair { clean, cond, source_id: id.to_string(), crop_offset: (0, 0) };
    pair.check()?;
    Ok(pair)
}

/// Clip to the HU window and map affinely onto `[-1, 1]`.
pub fn normalize_hu(raw: &Array2<f64>, window: (f64, f64)) -> Result<Array2<f32>> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(PfctError::invalid("HU window low must be below high"));
    }
    let scale = 2.0 / (hi - lo);
    Ok(raw.mapv(|v| ((v.clamp(lo, hi) - lo) * scale - 1.0) as f32))
}

/// Inverse of [`normalize_hu`] on the window interior.
pub fn denormalize_hu(norm: &Array2<f32>, window: (f64, f64)) -> Result<Array2<f64>> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(PfctError::invalid("HU window low must be below high"));
    }
    let scale = (hi - lo) / 2.0;
    Ok(norm.mapv(|v| (v as f64 + 1.0) * scale + lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// 128x128 at a uniformly random offset; training protocol.
    Random128,
    /// 128x128 centered; validation protocol.
    Center128,
    /// The whole image; testing protocol.
    Full,
}

const CROP: usize = 128;

/// Apply the crop protocol; offsets are recorded on the returned pair.
pub fn crop<R: Rng>(pair: &TrainingPair, mode: CropMode, rng: &mut R) -> Result<TrainingPair> {
    let (h, w) = pair.clean.dim();
    let (oy, ox, ch, cw) = match mode {
        CropMode::Full => (0, 0, h, w),
        CropMode::Center128 | CropMode::Random128 => {
            if h < CROP || w < CROP {
                return Err(PfctError::invalid(format!(
                    "{}: image {h}x{w} smaller than {CROP}x{CROP} crop",
                    pair.source_id
                )));
            }
            let (oy, ox) = match mode {
                CropMode::Center128 => ((h - CROP) / 2, (w - CROP) / 2),
                _ => (rng.gen_range(0..=h - CROP), rng.gen_range(0..=w - CROP)),
            };
            (oy, ox, CROP, CROP)
        }
    };
    let take = |img: &Array2<f32>| img.slice(ndarray::s![oy..oy + ch, ox..ox + cw]).to_owned();
    Ok(TrainingPair {
        clean: take(&pair.clean),
        cond: take(&pair.cond),
        source_id: pair.source_id.clone(),
        crop_offset: (oy, ox),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCase {
    pub low_dose: PathBuf,
    pub full_dose: PathBuf,
    /// HU window for normalization; the default is a fallback, not a
    /// clinical standard.
    #[serde(default = "default_window")]
    pub hu_window: (f64, f64),
    /// Added to raw integer pixel values to recover HU.
    #[serde(default)]
    pub hu_offset: f64,
    pub split: Split,
}

fn default_window() -> (f64, f64) {
    (-1000.0, 1000.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub cases: Vec<ManifestCase>,
}

/// Loaded dataset with its split structure.
#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    pub train: Vec<TrainingPair>,
    pub val: Vec<TrainingPair>,
    pub test: Vec<TrainingPair>,
}

impl PairedDataset {
    /// Split sizes alongside the reference clinical corpus sizes, for users
    /// checking a full-scale reproduction.
    pub fn split_report(&self) -> String {
        format!(
            "train {} (reference 11646), val {} (reference 1752), test {} (reference 1052)",
            self.train.len(),
            self.val.len(),
            self.test.len()
        )
    }
}

/// Sidecar header for raw float32 images: `<file>.json` next to the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub shape: (usize, usize),
    /// Only "f32" is supported.
    pub dtype: String,
    /// Only "little" is supported.
    pub byte_order: String,
}

/// Load one image in HU: 16-bit grayscale PNG/TIFF, or raw little-endian
/// f32 with a `<name>.raw.json` sidecar.
pub fn load_image_hu(path: &Path, hu_offset: f64) -> Result<Array2<f64>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "raw" {
        let sidecar_path = path.with_extension("raw.json");
        let sidecar: RawSidecar = serde_json::from_str(
            &fs::read_to_string(&sidecar_path)
                .map_err(|e| PfctError::Dataset(format!("{}: sidecar: {e}", path.display())))?,
        )
        .map_err(|e| PfctError::Dataset(format!("{}: sidecar: {e}", sidecar_path.display())))?;
        if sidecar.dtype != "f32" || sidecar.byte_order != "little" {
            return Err(PfctError::Dataset(format!(
                "{}: only little-endian f32 raw data is supported",
                path.display()
            )));
        }
        let bytes = fs::read(path)?;
        let (h, w) = sidecar.shape;
        if bytes.len() != h * w * 4 {
            return Err(PfctError::Dataset(format!(
                "{}: {} bytes, expected {} for shape {h}x{w}",
                path.display(),
                bytes.len(),
                h * w * 4
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 + hu_offset)
            .collect();
        Ok(Array2::from_shape_vec((h, w), vals).expect("length checked"))
    } else {
        let img = image::open(path)
            .map_err(|e| PfctError::Dataset(format!("{}: {e}", path.display())))?
            .into_luma16();
        let (w, h) = img.dimensions();
        Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
            img.get_pixel(j as u32, i as u32).0[0] as f64 + hu_offset
        }))
    }
}

/// Load a paired dataset described by a JSON manifest under `root`.
pub fn load_paired_dataset(root: &Path, manifest_path: &Path) -> Result<PairedDataset> {
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(manifest_path)
            .map_err(|e| PfctError::Dataset(format!("{}: {e}", manifest_path.display())))?,
    )
    .map_err(|e| PfctError::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let mut out = PairedDataset::default();
    for (idx, case) in manifest.cases.iter().enumerate() {
        let low = load_image_hu(&root.join(&case.low_dose), case.hu_offset)
            .map_err(|e| PfctError::Dataset(format!("case {idx}: {e}")))?;
        let full = load_image_hu(&root.join(&case.full_dose), case.hu_offset)
            .map_err(|e| PfctError::Dataset(format!("case {idx}: {e}")))?;
        if low.dim() != full.dim() {
            return Err(PfctError::Dataset(format!(
                "case {idx}: low {:?} vs full {:?}",
                low.dim(),
                full.dim()
            )));
        }
        let pair = TrainingPair {
            clean: normalize_hu(&full, case.hu_window)?,
            cond: normalize_hu(&low, case.hu_window)?,
            source_id: format!("case {idx}: {}", case.full_dose.display()),
            crop_offset: (0, 0),
        };
        pair.check()?;
        match case.split {
            Split::Train => out.train.push(pair),
            Split::Val => out.val.push(pair),
            Split::Test => out.test.push(pair),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn full_dose_zero_floor_is_exact() {
        let cfg = PhantomConfig { dose_fraction: 1.0, noise_floor: 0.0, ..Default::default() };
        let pair = make_phantom_pair(&cfg, "p", &mut stream(1, "data")).unwrap();
        assert_eq!(pair.clean, pair.cond);
    }

    #[test]
    fn noise_sigma_dose_scaling() {
        // floor 0: sigma(dose) = q·sqrt(1/dose − 1)
        let q = 0.05;
        assert_eq!(noise_sigma(1.0, 0.0, q), 0.0);
        let s25 = noise_sigma(0.25, 0.0, q);
        assert!((s25 - q * 3.0f64.sqrt()).abs() < 1e-12);
        // floor alone survives full dose
        assert!((noise_sigma(1.0, 0.02, q) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn correlated_field_matches_analytic_std() {
        let sigma = 0.1;
        let field = correlated_noise_field(256, 256, sigma, &mut stream(2, "noise"));
        // interior only; the border loses kernel mass
        let inner = field.slice(ndarray::s![2..254, 2..254]);
        let n = inner.len() as f64;
        let mean: f64 = inner.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var: f64 = inner.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - sigma).abs() / sigma < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn phantom_determinism() {
        let cfg = PhantomConfig::default();
        let a = make_phantom_pair(&cfg, "p", &mut stream(3, "data")).unwrap();
        let b = make_phantom_pair(&cfg, "p", &mut stream(3, "data")).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.cond, b.cond);
    }

    #[test]
    fn phantom_in_range_and_noisy() {
        let cfg = PhantomConfig::default();
        let pair = make_phantom_pair(&cfg, "p", &mut stream(4, "data")).unwrap();
        pair.check().unwrap();
        assert_ne!(pair.clean, pair.cond);
    }

    #[test]
    fn rejects_bad_dose() {
        for dose in [0.0, -0.5, 1.5] {
            let cfg = PhantomConfig { dose_fraction: dose, ..Default::default() };
            assert!(make_phantom_pair(&cfg, "p", &mut stream(5, "data")).is_err());
        }
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let raw = ndarray::array![[-1000.0, 0.0, 1000.0, 2500.0]];
        let n = normalize_hu(&raw, (-1000.0, 1000.0)).unwrap();
        assert_eq!(n[[0, 0]], -1.0);
        assert_eq!(n[[0, 1]], 0.0);
        assert_eq!(n[[0, 2]], 1.0);
        assert_eq!(n[[0, 3]], 1.0); // clipped
    }

    #[test]
    fn normalize_round_trip() {
        let raw = ndarray::array![[-999.0, -123.0, 0.5, 456.0, 999.0]];
        let w = (-1000.0, 1000.0);
        let back = denormalize_hu(&normalize_hu(&raw, w).unwrap(), w).unwrap();
        for (a, b) in raw.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    fn big_pair(side: usize) -> TrainingPair {
        let img = Array2::from_shape_fn((side, side), |(i, j)| ((i * 31 + j) % 97) as f32 / 97.0);
        TrainingPair { clean: img.clone(), cond: img, source_id: "t".into(), crop_offset: (0, 0) }
    }

    #[test]
    fn center_crop_offset_on_512() {
        let p = crop(&big_pair(512), CropMode::Center128, &mut stream(6, "crop")).unwrap();
        assert_eq!(p.crop_offset, (192, 192));
        assert_eq!(p.clean.dim(), (128, 128));
    }

    #[test]
    fn random_crop_reproducible() {
        let a = crop(&big_pair(256), CropMode::Random128, &mut stream(7, "crop")).unwrap();
        let b = crop(&big_pair(256), CropMode::Random128, &mut stream(7, "crop")).unwrap();
        assert_eq!(a.crop_offset, b.crop_offset);
        assert_eq!(a.clean, b.clean);
    }

    #[test]
    fn full_crop_is_identity() {
        let src = big_pair(512);
        let p = crop(&src, CropMode::Full, &mut stream(8, "crop")).unwrap();
        assert_eq!(p.clean, src.clean);
        assert_eq!(p.crop_offset, (0, 0));
    }

    #[test]
    fn crop_rejects_undersized() {
        assert!(crop(&big_pair(64), CropMode::Random128, &mut stream(9, "crop")).is_err());
        assert!(crop(&big_pair(64), CropMode::Center128, &mut stream(9, "crop")).is_ok() == false);
    }

    #[test]
    fn raw_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let (h, w) = (16, 16);
        let write_raw = |name: &str, offset: f32| {
            let mut bytes = Vec::new();
            for i in 0..h * w {
                bytes.extend_from_slice(&((i as f32) - 500.0 + offset).to_le_bytes());
            }
            fs::write(root.join(name), &bytes).unwrap();
            let sidecar = RawSidecar { shape: (h, w), dtype: "f32".into(), byte_order: "little".into() };
            fs::write(
                root.join(format!("{}.json", name)),
                serde_json::to_string(&sidecar).unwrap(),
            )
            .unwrap();
        };
        write_raw("low.raw", 40.0);
        write_raw("full.raw", 0.0);
        let manifest = Manifest {
            cases: vec![ManifestCase {
                low_dose: "low.raw".into(),
                full_dose: "full.raw".into(),
                hu_window: (-1000.0, 1000.0),
                hu_offset: 0.0,
                split: Split::Test,
            }],
        };
        fs::write(root.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
        let ds = load_paired_dataset(root, &root.join("manifest.json")).unwrap();
        assert_eq!(ds.test.len(), 1);
        assert_eq!(ds.test[0].clean.dim(), (16, 16));
        // pixel 0 is -500 HU → normalized -0.5
        assert!((ds.test[0].clean[[0, 0]] + 0.5).abs() < 1e-6);
        assert!(ds.split_report().contains("test 1"));
    }

    #[test]
    fn dataset_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let write_raw = |name: &str, h: usize, w: usize| {
            fs::write(root.join(name), vec![0u8; h * w * 4]).unwrap();
            let sidecar = RawSidecar { shape: (h, w), dtype: "f32".into(), byte_order: "little".into() };
            fs::write(root.join(format!("{}.json", name)), serde_json::to_string(&sidecar).unwrap())
                .unwrap();
        };
        write_raw("low.raw", 8, 8);
        write_raw("full.raw", 8, 10);
        let manifest = Manifest {
            cases: vec![ManifestCase {
                low_dose: "low.raw".into(),
                full_dose: "full.raw".into(),
                hu_window: (-1000.0, 1000.0),
                hu_offset: 0.0,
                split: Split::Train,
            }],
        };
        fs::write(root.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_paired_dataset(root, &root.join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("case 0"));
    }

    #[test]
    fn png_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let (h, w) = (12u32, 12u32);
        let img = image::ImageBuffer::from_fn(w, h, |x, y| image::Luma([(x * 100 + y) as u16]));
        img.save(root.join("low.png")).unwrap();
        img.save(root.join("full.png")).unwrap();
        let manifest = Manifest {
            cases: vec![ManifestCase {
                low_dose: "low.png".into(),
                full_dose: "full.png".into(),
                hu_window: (-1000.0, 1000.0),
                hu_offset: -1000.0,
                split: Split::Val,
            }],
        };
        fs::write(root.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
        let ds = load_paired_dataset(root, &root.join("manifest.json")).unwrap();
        assert_eq!(ds.val.len(), 1);
        // raw 0 + offset -1000 → HU -1000 → normalized -1
        assert_eq!(ds.val[0].clean[[0, 0]], -1.0);
    }
}
