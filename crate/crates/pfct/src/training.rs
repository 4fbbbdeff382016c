//! The end-to-end training loop: schedule advancement, noise-level
//! selection, shared-angle pair perturbation, loss, optimizer update,
//! checkpointing, and metric logging.
//!
//! There is no moving-average copy of the weights anywhere in the trainer;
//! the teacher branch is the student with gradients stopped, so the state is
//! exactly one network plus the optimizer moments.
//!
//! Determinism contract: all randomness flows through named ChaCha streams
//! seeded from the run seed. Checkpoints store the stream states, so
//! resuming from a checkpoint reproduces the uninterrupted run bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{crop, CropMode, PairedDataset, PhantomConfig, TrainingPair};
use crate::error::{PfctError, Result};
use crate::kernel::perturb_pair;
use crate::loss::{consistency_loss_batch, LossConfig};
use crate::metrics::evaluate_split;
use crate::model::ConsistencyFunction;
use crate::nn::NetworkConfig;
use crate::noise_select::{
    sample_beta_indices, sample_lognormal_indices, sample_uniform_indices, NoiseSelectConfig,
    NoiseSelectMode,
};
use crate::optim::{OptimConfig, RAdam};
use crate::plot::{line_plot, Series, COLOR_BLUE, COLOR_GREEN, COLOR_ORANGE};
use crate::rng::stream;
use crate::schedules::{sigma_grid, ScheduleConfig};

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub batch_size: usize,
    /// Augmentation dimensions D of the perturbation kernel.
    pub aug_dim: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    /// Inference noise level used for validation denoising.
    pub sigma_star: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    /// Validation images scored per evaluation.
    pub eval_images: usize,
    pub schedule: ScheduleConfig,
    pub noise_select: NoiseSelectConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub network: NetworkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            aug_dim: 2048,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            sigma_data: 0.5,
            sigma_star: 0.5,
            seed: 0,
            checkpoint_interval: 2000,
            eval_interval: 500,
            eval_images: 16,
            schedule: ScheduleConfig::default(),
            noise_select: NoiseSelectConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(PfctError::invalid("batch_size must be >= 2"));
        }
        if self.aug_dim == 0 {
            return Err(PfctError::invalid("aug_dim must be >= 1"));
        }
        if !(0.0 < self.sigma_min && self.sigma_min < self.sigma_max) {
            return Err(PfctError::invalid("need 0 < sigma_min < sigma_max"));
        }
        if !(self.rho > 0.0 && self.sigma_data > 0.0) {
            return Err(PfctError::invalid("rho and sigma_data must be positive"));
        }
        if self.sigma_star < self.sigma_min {
            return Err(PfctError::invalid("sigma_star must be >= sigma_min"));
        }
        if self.checkpoint_interval == 0 || self.eval_interval == 0 || self.eval_images == 0 {
            return Err(PfctError::invalid("intervals and eval_images must be >= 1"));
        }
        self.schedule.validate()?;
        self.noise_select.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.network.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub m: u32,
    pub sigma_mean: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub ssim: f64,
    pub psnr: f64,
}

/// Append-only run log; training rows first, then the evaluation section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub train: Vec<TrainRecord>,
    pub evals: Vec<EvalRecord>,
}

impl RunLog {
    pub fn csv(&self) -> String {
        let mut out = String::from("step,M,sigma_mean,loss\n");
        for r in &self.train {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.m, r.sigma_mean, r.loss));
        }
        out.push_str("step,ssim,psnr\n");
        for r in &self.evals {
            out.push_str(&format!("{},{},{}\n", r.step, r.ssim, r.psnr));
        }
        out
    }

    /// Trailing moving average of the training loss at a given step index.
    pub fn loss_moving_average(&self, at: usize, window: usize) -> Option<f64> {
        if at >= self.train.len() || window == 0 {
            return None;
        }
        let lo = (at + 1).saturating_sub(window);
        let vals = &self.train[lo..=at];
        Some(vals.iter().map(|r| r.loss).sum::<f64>() / vals.len() as f64)
    }
}

/// Full mutable state of a run.
pub struct TrainState {
    pub cfg: RunConfig,
    pub f: ConsistencyFunction<f32>,
    pub opt: RAdam<f32>,
    pub step: u64,
    pub rng_data: ChaCha8Rng,
    pub rng_kernel: ChaCha8Rng,
    pub log: RunLog,
}

impl TrainState {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let f = ConsistencyFunction::<f32>::new(
            cfg.network,
            cfg.sigma_min,
            cfg.sigma_data,
            &mut stream(cfg.seed, "init"),
        )?;
        let lens: Vec<usize> = f.net.param_slices().iter().map(|s| s.len()).collect();
        let opt = RAdam::new(cfg.optim, &lens)?;
        Ok(Self {
            rng_data: stream(cfg.seed, "data"),
            rng_kernel: stream(cfg.seed, "kernel"),
            f,
            opt,
            step: 0,
            log: RunLog::default(),
            cfg,
        })
    }
}

/// What one step reports back.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub loss: f64,
    pub m: u32,
    pub sigma_mean: f64,
}

fn flatten_f64(img: &ndarray::Array2<f32>) -> Vec<f64> {
    img.iter().map(|v| *v as f64).collect()
}

/// One training step at the state's current step counter. The step counter
/// itself is advanced by the caller after logging.
pub fn train_step(state: &mut TrainState, batch: &[TrainingPair]) -> Result<StepOutcome> {
    let cfg = &state.cfg;
    if batch.len() != cfg.batch_size {
        return Err(PfctError::invalid(format!(
            "batch of {} pairs, configured batch_size {}",
            batch.len(),
            cfg.batch_size
        )));
    }
    let k = state.step;
    let m = cfg.schedule.steps_at(k)?;
    let grid = sigma_grid(m as usize, cfg.sigma_min, cfg.sigma_max, cfg.rho)?;
    // indices select adjacent pairs (σ_i, σ_{i+1}), so there are M-1 bins
    let bins = m as usize - 1;
    let indices = match cfg.noise_select.mode {
        NoiseSelectMode::Beta => {
            sample_beta_indices(cfg.batch_size, bins, &cfg.noise_select, &mut state.rng_kernel)?
        }
        NoiseSelectMode::Lognormal => {
            sample_lognormal_indices(cfg.batch_size, &grid, &cfg.noise_select, &mut state.rng_kernel)?
        }
        NoiseSelectMode::Uniform => {
            sample_uniform_indices(cfg.batch_size, bins, &mut state.rng_kernel)?
        }
    };

    let (h, w) = batch[0].clean.dim();
    let n = cfg.batch_size;
    let mut x_lo = Array4::<f32>::zeros((n, 1, h, w));
    let mut x_hi = Array4::<f32>::zeros((n, 1, h, w));
    let mut y = Array4::<f32>::zeros((n, 1, h, w));
    let mut sig_lo = Vec::with_capacity(n);
    let mut sig_hi = Vec::with_capacity(n);
    for (b, (pair, &i)) in batch.iter().zip(&indices).enumerate() {
        if pair.clean.dim() != (h, w) {
            return Err(PfctError::ShapeMismatch(format!(
                "{}: {:?} in a {h}x{w} batch",
                pair.source_id,
                pair.clean.dim()
            )));
        }
        let s_lo = grid.levels()[i];
        let s_hi = grid.levels()[i + 1];
        let flat = flatten_f64(&pair.clean);
        let (lo, hi, _) =
            perturb_pair(&flat, s_lo, s_hi, cfg.aug_dim, false, &mut state.rng_kernel)?;
        for (dst, src) in x_lo
            .index_axis_mut(Axis(0), b)
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(&lo)
        {
            *dst = *src as f32;
        }
        for (dst, src) in x_hi
            .index_axis_mut(Axis(0), b)
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(&hi)
        {
            *dst = *src as f32;
        }
        for (dst, src) in y
            .index_axis_mut(Axis(0), b)
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(pair.cond.iter())
        {
            *dst = *src;
        }
        sig_lo.push(s_lo);
        sig_hi.push(s_hi);
    }

    let mut grads = state.f.net.zeros_like();
    let out = consistency_loss_batch(
        &state.f, &x_hi, &sig_hi, &x_lo, &sig_lo, &y, &cfg.loss, &mut grads,
    )
    .map_err(|e| match e {
        // a non-finite loss leaves the parameters untouched; surface the
        // seed so the batch can be replayed
        PfctError::NonFinite(msg) => {
            PfctError::NonFinite(format!("step {k} (seed {}): {msg}", cfg.seed))
        }
        other => other,
    })?;

    let gslices = grads.param_slices();
    let mut pslices = state.f.net.param_slices_mut();
    state.opt.update(&mut pslices, &gslices)?;
    let sigma_mean = sig_lo.iter().sum::<f64>() / n as f64;
    Ok(StepOutcome { loss: out.loss, m, sigma_mean })
}

/// Generate a synthetic phantom dataset with per-split random streams.
pub fn synthesize_phantom_dataset(
    cfg: &PhantomConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<PairedDataset> {
    let mut out = PairedDataset::default();
    for (label, n, dst) in [
        ("phantom-train", n_train, &mut out.train),
        ("phantom-val", n_val, &mut out.val),
        ("phantom-test", n_test, &mut out.test),
    ] {
        let mut rng = stream(seed, label);
        for i in 0..n {
            dst.push(crate::data::make_phantom_pair(cfg, &format!("{label}-{i}"), &mut rng)?);
        }
    }
    Ok(out)
}

fn draw_batch(
    dataset: &PairedDataset,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingPair>> {
    if dataset.train.is_empty() {
        return Err(PfctError::Dataset("empty training split".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = rng.gen_range(0..dataset.train.len());
        let pair = &dataset.train[idx];
        let (h, w) = pair.clean.dim();
        let cropped = if h >= 128 && w >= 128 {
            crop(pair, CropMode::Random128, rng)?
        } else {
            pair.clone()
        };
        out.push(cropped);
    }
    Ok(out)
}

fn eval_pairs(dataset: &PairedDataset, limit: usize) -> Vec<TrainingPair> {
    let mut rng = stream(0, "eval-crop");
    dataset
        .val
        .iter()
        .take(limit)
        .map(|p| {
            let (h, w) = p.clean.dim();
            if h >= 128 && w >= 128 {
                crop(p, CropMode::Center128, &mut rng).expect("size checked")
            } else {
                p.clone()
            }
        })
        .collect()
}

/// Run (or continue) training to `schedule.total_steps`, writing checkpoints,
/// the run log, and curve plots into `out_dir`.
pub fn train_run(dataset: &PairedDataset, state: &mut TrainState, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let total = state.cfg.schedule.total_steps;
    let val = eval_pairs(dataset, state.cfg.eval_images);
    if state.step == 0 {
        save_checkpoint(&out_dir.join("checkpoint.bin"), state)?;
    }
    let mut skipped = 0u64;
    while state.step < total {
        let k = state.step;
        let batch = draw_batch(dataset, state.cfg.batch_size, &mut state.rng_data)?;
        match train_step(state, &batch) {
            Ok(outcome) => {
                state.log.train.push(TrainRecord {
                    step: k,
                    m: outcome.m,
                    sigma_mean: outcome.sigma_mean,
                    loss: outcome.loss,
                });
            }
            Err(PfctError::NonFinite(msg)) => {
                eprintln!("skipping step {k}: non-finite loss: {msg}");
                skipped += 1;
                if skipped > 100 {
                    return Err(PfctError::NonFinite(format!(
                        "more than 100 non-finite steps; last: {msg}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
        state.step = k + 1;
        let done = state.step == total;
        if state.step % state.cfg.eval_interval == 0 || done {
            if !val.is_empty() {
                // stateless eval stream so resumed runs evaluate identically
                let mut rng = stream(state.cfg.seed.wrapping_add(state.step), "eval");
                let report = evaluate_split(
                    &state.f,
                    &val,
                    state.cfg.sigma_star,
                    state.cfg.aug_dim,
                    2.0,
                    &mut rng,
                )?;
                state.log.evals.push(EvalRecord {
                    step: state.step,
                    ssim: report.ssim_mean,
                    psnr: report.psnr_mean,
                });
            }
        }
        if state.step % state.cfg.checkpoint_interval == 0 || done {
            save_checkpoint(&out_dir.join("checkpoint.bin"), state)?;
            save_checkpoint(&out_dir.join(format!("checkpoint-{:07}.bin", state.step)), state)?;
        }
    }
    write_artifacts(state, out_dir)
}

fn write_artifacts(state: &TrainState, out_dir: &Path) -> Result<()> {
    fs::write(out_dir.join("runlog.csv"), state.log.csv())?;
    if !state.log.train.is_empty() {
        let loss = Series {
            points: state.log.train.iter().map(|r| (r.step as f64, r.loss)).collect(),
            color: COLOR_BLUE,
        };
        line_plot(&out_dir.join("loss.png"), &[loss], true)?;
    }
    if !state.log.evals.is_empty() {
        let ssim = Series {
            points: state.log.evals.iter().map(|r| (r.step as f64, r.ssim)).collect(),
            color: COLOR_GREEN,
        };
        let psnr = Series {
            points: state.log.evals.iter().map(|r| (r.step as f64, r.psnr)).collect(),
            color: COLOR_ORANGE,
        };
        line_plot(&out_dir.join("val_ssim.png"), &[ssim], false)?;
        line_plot(&out_dir.join("val_psnr.png"), &[psnr], false)?;
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"PFCTCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    cfg: RunConfig,
    step: u64,
    opt_step: u64,
    rng_data: ChaCha8Rng,
    rng_kernel: ChaCha8Rng,
    log: RunLog,
    param_lens: Vec<usize>,
}

/// Write a checkpoint atomically (temp file then rename).
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let header = CheckpointHeader {
        cfg: state.cfg.clone(),
        step: state.step,
        opt_step: state.opt.step,
        rng_data: state.rng_data.clone(),
        rng_kernel: state.rng_kernel.clone(),
        log: state.log.clone(),
        param_lens: state.f.net.param_slices().iter().map(|s| s.len()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| PfctError::Checkpoint(format!("header: {e}")))?;
    let tmp = path.with_extension("tmp");
    {
        let mut fh = fs::File::create(&tmp)?;
        fh.write_all(MAGIC)?;
        fh.write_all(&VERSION.to_le_bytes())?;
        fh.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        fh.write_all(&header_bytes)?;
        let mut write_slices = |slices: Vec<&[f32]>| -> Result<()> {
            for s in slices {
                let mut buf = Vec::with_capacity(s.len() * 4);
                for v in s {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                fh.write_all(&buf)?;
            }
            Ok(())
        };
        write_slices(state.f.net.param_slices())?;
        write_slices(state.opt.m.iter().map(|v| v.as_slice()).collect())?;
        write_slices(state.opt.v.iter().map(|v| v.as_slice()).collect())?;
        fh.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint into a fresh state.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(PfctError::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(PfctError::Checkpoint(format!(
            "checkpoint version {version}, this build reads version {VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes
            .get(20..20 + hlen)
            .ok_or_else(|| PfctError::Checkpoint("truncated header".into()))?,
    )
    .map_err(|e| PfctError::Checkpoint(format!("header: {e}")))?;
    header.cfg.validate()?;
    let mut state = TrainState::new(header.cfg)?;
    let own_lens: Vec<usize> = state.f.net.param_slices().iter().map(|s| s.len()).collect();
    if own_lens != header.param_lens {
        return Err(PfctError::Checkpoint("parameter layout mismatch".into()));
    }
    let total: usize = own_lens.iter().sum();
    let payload = &bytes[20 + hlen..];
    if payload.len() != total * 3 * 4 {
        return Err(PfctError::Checkpoint(format!(
            "payload {} bytes, expected {}",
            payload.len(),
            total * 12
        )));
    }
    let mut vals = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for s in state.f.net.param_slices_mut() {
        for v in s.iter_mut() {
            *v = vals.next().unwrap();
        }
    }
    for bank in [&mut state.opt.m, &mut state.opt.v] {
        for s in bank.iter_mut() {
            for v in s.iter_mut() {
                *v = vals.next().unwrap();
            }
        }
    }
    state.step = header.step;
    state.opt.step = header.opt_step;
    state.rng_data = header.rng_data;
    state.rng_kernel = header.rng_kernel;
    state.log = header.log;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(total_steps: u64) -> RunConfig {
        RunConfig {
            batch_size: 4,
            eval_interval: 2,
            checkpoint_interval: 2,
            eval_images: 2,
            schedule: ScheduleConfig { total_steps, ..ScheduleConfig::default() },
            network: NetworkConfig {
                base_channels: 4,
                depth: 2,
                noise_embedding_dim: 8,
                use_attention_gate: false,
            },
            ..RunConfig::default()
        }
    }

    fn tiny_dataset(seed: u64) -> PairedDataset {
        let pcfg = PhantomConfig { side: 16, ..Default::default() };
        synthesize_phantom_dataset(&pcfg, 8, 2, 2, seed).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut cfg = tiny_cfg(1);
        cfg.optim.learning_rate = 0.0;
        let ds = tiny_dataset(1);
        let mut state = TrainState::new(cfg).unwrap();
        let before: Vec<u32> = state
            .f
            .net
            .param_slices()
            .iter()
            .flat_map(|s| s.iter().map(|v| v.to_bits()))
            .collect();
        let batch = draw_batch(&ds, state.cfg.batch_size, &mut state.rng_data.clone()).unwrap();
        train_step(&mut state, &batch).unwrap();
        let after: Vec<u32> = state
            .f
            .net
            .param_slices()
            .iter()
            .flat_map(|s| s.iter().map(|v| v.to_bits()))
            .collect();
        for (i, (b, a)) in before.iter().zip(&after).enumerate() {
            assert_eq!(
                b,
                a,
                "param {i}: {} -> {}",
                f32::from_bits(*b),
                f32::from_bits(*a)
            );
        }
        assert_eq!(before.len(), after.len());
    }

    #[test]
    fn first_step_uses_eleven_levels() {
        let ds = tiny_dataset(2);
        let mut state = TrainState::new(tiny_cfg(20_000)).unwrap();
        let batch = draw_batch(&ds, state.cfg.batch_size, &mut state.rng_data.clone()).unwrap();
        let outcome = train_step(&mut state, &batch).unwrap();
        assert_eq!(outcome.m, 11);
        assert!(outcome.loss.is_finite());
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let run = || {
            let ds = tiny_dataset(3);
            let mut state = TrainState::new(tiny_cfg(4)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            train_run(&ds, &mut state, dir.path()).unwrap();
            state.log.csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn m_is_nondecreasing_over_the_run() {
        let ds = tiny_dataset(4);
        let mut state = TrainState::new(tiny_cfg(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train_run(&ds, &mut state, dir.path()).unwrap();
        let ms: Vec<u32> = state.log.train.iter().map(|r| r.m).collect();
        assert!(ms.windows(2).all(|w| w[0] <= w[1]));
        assert!(state.log.train.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn zero_step_run_emits_checkpoint_and_empty_log() {
        let ds = tiny_dataset(5);
        let mut cfg = tiny_cfg(1);
        cfg.schedule.total_steps = 1;
        let mut state = TrainState::new(cfg).unwrap();
        state.step = 1; // already at the end
        let dir = tempfile::tempdir().unwrap();
        train_run(&ds, &mut state, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("runlog.csv")).unwrap();
        assert_eq!(csv, "step,M,sigma_mean,loss\nstep,ssim,psnr\n");
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let ds = tiny_dataset(6);
        // uninterrupted run to 6 steps; mid-run checkpoints land at 2 and 4
        let mut full = TrainState::new(tiny_cfg(6)).unwrap();
        let dir_full = tempfile::tempdir().unwrap();
        train_run(&ds, &mut full, dir_full.path()).unwrap();

        // resume the step-4 checkpoint of that same run and continue to 6
        let mut resumed = load_checkpoint(&dir_full.path().join("checkpoint-0000004.bin")).unwrap();
        assert_eq!(resumed.step, 4);
        let dir_res = tempfile::tempdir().unwrap();
        train_run(&ds, &mut resumed, dir_res.path()).unwrap();

        let bits = |s: &TrainState| -> Vec<u32> {
            s.f.net
                .param_slices()
                .iter()
                .flat_map(|sl| sl.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&full), bits(&resumed));
        assert_eq!(full.log.csv(), resumed.log.csv());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn run_writes_artifacts() {
        let ds = tiny_dataset(7);
        let mut state = TrainState::new(tiny_cfg(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train_run(&ds, &mut state, dir.path()).unwrap();
        for f in ["runlog.csv", "loss.png", "val_ssim.png", "val_psnr.png", "checkpoint.bin"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        let csv = fs::read_to_string(dir.path().join("runlog.csv")).unwrap();
        assert!(csv.starts_with("step,M,sigma_mean,loss\n"));
        assert!(csv.contains("step,ssim,psnr"));
    }

    #[test]
    fn moving_average_window() {
        let mut log = RunLog::default();
        for (i, l) in [4.0, 2.0, 6.0, 8.0].iter().enumerate() {
            log.train.push(TrainRecord { step: i as u64, m: 11, sigma_mean: 1.0, loss: *l });
        }
        assert_eq!(log.loss_moving_average(3, 2), Some(7.0));
        assert_eq!(log.loss_moving_average(3, 10), Some(5.0));
        assert_eq!(log.loss_moving_average(9, 2), None);
    }
}
