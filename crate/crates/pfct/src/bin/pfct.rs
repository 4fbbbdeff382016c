//! Command-line entry point: training, single-step denoising, evaluation,
//! schedule plotting, and statistical self-tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array4, Axis};

use pfct::config::{load_app_config, write_resolved_config, AppConfig};
use pfct::data::load_image_hu;
use pfct::error::Result;
use pfct::kernel::{ks_statistic, sample_radius, sample_uniform_angle, AugmentedKernelSpec, QuadratureCdf};
use pfct::loss::pseudo_huber;
use pfct::metrics::{evaluate_split, psnr, ssim};
use pfct::model::ConsistencyFunction;
use pfct::nn::NetworkConfig;
use pfct::plot::{line_plot, Series, COLOR_BLUE, COLOR_GREEN, COLOR_ORANGE};
use pfct::rng::stream;
use pfct::schedules::{sigma_grid, ScheduleConfig, ScheduleKind};
use pfct::training::{load_checkpoint, train_run, TrainState};

#[derive(Parser)]
#[command(name = "pfct", about = "Poisson flow consistency training and single-step denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (shorthand for --override run.seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// key.path=value overrides applied on top of the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<AppConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        load_app_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a training run.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for checkpoints, logs, and plots.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Denoise one image (or every image in a directory) in a single step.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 16-bit grayscale PNG/TIFF or raw f32 (with .raw.json sidecar).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Inference noise level; defaults to the value in the checkpoint.
        #[arg(long)]
        sigma_star: Option<f64>,
        /// Optional ground-truth image; adds SSIM/PSNR to the sidecar.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Added to raw integer pixel values to recover HU.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        hu_offset: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sigma_star: Option<f64>,
    },
    /// Plot the discretization schedules M(k) and the sigma grid.
    SchedulePlot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistical self-tests of the kernel, schedules, loss, and boundary
    /// condition; exits nonzero if any property fails.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { cfg, out, resume } => cmd_train(&cfg, &out, resume.as_deref()),
        Command::Denoise { checkpoint, input, out, sigma_star, reference, hu_offset, seed } => {
            cmd_denoise(&checkpoint, &input, &out, sigma_star, reference.as_deref(), hu_offset, seed)
        }
        Command::Eval { cfg, checkpoint, out, sigma_star } => {
            cmd_eval(&cfg, &checkpoint, &out, sigma_star)
        }
        Command::SchedulePlot { cfg, out } => cmd_schedule_plot(&cfg, &out),
        Command::Selftest => return cmd_selftest(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_train(cfg_args: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = cfg_args.load()?;
    write_resolved_config(&cfg, out)?;
    let dataset = cfg.load_dataset()?;
    println!("dataset: {}", dataset.split_report());
    let mut state = match resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            println!("resumed at step {} from {}", state.step, path.display());
            state
        }
        None => TrainState::new(cfg.run.clone())?,
    };
    train_run(&dataset, &mut state, out)?;
    if let Some(last) = state.log.evals.last() {
        println!(
            "finished at step {}: val SSIM {:.4}, PSNR {:.2} dB",
            state.step, last.ssim, last.psnr
        );
    } else {
        println!("finished at step {}", state.step);
    }
    write_file_manifest(out)?;
    Ok(())
}

fn to_batch(img: &Array2<f32>) -> Array4<f32> {
    let (h, w) = img.dim();
    img.to_owned().into_shape_with_order((1, 1, h, w)).expect("reshape")
}

fn save_norm_png(path: &Path, img: &Array2<f32>) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (y, row) in img.outer_iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            let u = (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.put_pixel(x as u32, y as u32, image::Luma([u]));
        }
    }
    out.save(path).map_err(pfct::PfctError::from)
}

fn cmd_denoise(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    sigma_star: Option<f64>,
    reference: Option<&Path>,
    hu_offset: f64,
    seed: Option<u64>,
) -> Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let cfg = &state.cfg;
    let sigma_star = sigma_star.unwrap_or(cfg.sigma_star);
    let window = (-1000.0, 1000.0);
    fs::create_dir_all(out)?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("tif") | Some("tiff") | Some("raw")
                )
            })
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    let mut rng = stream(seed.unwrap_or(cfg.seed), "denoise");
    for path in inputs {
        let hu = load_image_hu(&path, hu_offset)?;
        let y = pfct::data::normalize_hu(&hu, window)?;
        state.f.reset_nfe();
        let denoised = state.f.denoise(&to_batch(&y), sigma_star, cfg.aug_dim, &mut rng)?;
        let img = denoised.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        save_norm_png(&out.join(format!("{stem}_denoised.png")), &img)?;
        let mut sidecar = serde_json::json!({
            "input": path.display().to_string(),
            "sigma_star": sigma_star,
            "nfe": state.f.nfe(),
        });
        if let Some(ref_path) = reference {
            let ref_img = pfct::data::normalize_hu(&load_image_hu(ref_path, hu_offset)?, window)?;
            sidecar["ssim"] = serde_json::json!(ssim(&img, &ref_img, 2.0)?);
            sidecar["psnr_db"] = serde_json::json!(psnr(&img, &ref_img, 2.0)?);
        }
        fs::write(
            out.join(format!("{stem}_denoised.json")),
            serde_json::to_string_pretty(&sidecar).expect("json"),
        )?;
        println!("{} -> {stem}_denoised.png (NFE {})", path.display(), state.f.nfe());
    }
    write_file_manifest(out)?;
    Ok(())
}

fn cmd_eval(cfg_args: &ConfigArgs, checkpoint: &Path, out: &Path, sigma_star: Option<f64>) -> Result<()> {
    let cfg = cfg_args.load()?;
    let state = load_checkpoint(checkpoint)?;
    let sigma_star = sigma_star.unwrap_or(state.cfg.sigma_star);
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(out)?;
    let mut rng = stream(cfg.run.seed, "eval-cli");
    let report =
        evaluate_split(&state.f, &dataset.test, sigma_star, state.cfg.aug_dim, 2.0, &mut rng)?;
    println!("{}", report.table_row("test"));
    for failure in &report.failures {
        eprintln!("failed: {failure}");
    }
    fs::write(out.join("eval.csv"), report.csv())?;
    write_file_manifest(out)?;
    Ok(())
}

fn cmd_schedule_plot(cfg_args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = cfg_args.load()?;
    fs::create_dir_all(out)?;
    let base = cfg.run.schedule;
    let kinds = [(ScheduleKind::Sinusoidal, COLOR_BLUE), (ScheduleKind::Exponential, COLOR_ORANGE)];
    let mut series = Vec::new();
    let mut csv = String::from("k,sinusoidal,exponential\n");
    let mut rows: Vec<(u64, u32, u32)> = Vec::new();
    for k in 0..=base.total_steps {
        let sin = ScheduleConfig { kind: ScheduleKind::Sinusoidal, ..base }.steps_at(k)?;
        let exp = ScheduleConfig { kind: ScheduleKind::Exponential, ..base }.steps_at(k)?;
        rows.push((k, sin, exp));
    }
    for (kind, color) in kinds {
        let col = |r: &(u64, u32, u32)| match kind {
            ScheduleKind::Sinusoidal => r.1,
            ScheduleKind::Exponential => r.2,
        };
        series.push(Series {
            points: rows.iter().map(|r| (r.0 as f64, col(r) as f64)).collect(),
            color,
        });
    }
    for (k, sin, exp) in &rows {
        csv.push_str(&format!("{k},{sin},{exp}\n"));
    }
    line_plot(&out.join("schedule.png"), &series, false)?;
    fs::write(out.join("schedule.csv"), csv)?;

    let m = (base.s1 + 1) as usize;
    let grid = sigma_grid(m, cfg.run.sigma_min, cfg.run.sigma_max, cfg.run.rho)?;
    let mut gcsv = String::from("i,sigma\n");
    for (i, s) in grid.levels().iter().enumerate() {
        gcsv.push_str(&format!("{i},{s}\n"));
    }
    fs::write(out.join("sigma_grid.csv"), gcsv)?;
    let gs = Series {
        points: grid.levels().iter().enumerate().map(|(i, s)| (i as f64, *s)).collect(),
        color: COLOR_GREEN,
    };
    line_plot(&out.join("sigma_grid.png"), &[gs], true)?;
    println!("schedule curves and sigma grid written to {}", out.display());
    write_file_manifest(out)?;
    Ok(())
}

fn check(name: &str, pass: bool, detail: String) -> bool {
    println!("{}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn cmd_selftest() -> ExitCode {
    let mut all = true;

    // kernel CDF agreement at a reduced sample count
    for (n, d) in [(1usize, 2usize), (4, 6), (16, 128), (64, 2048)] {
        let spec = AugmentedKernelSpec::new(n, d, 1.0 / (d as f64).sqrt()).unwrap();
        let mut draws = sample_radius(&spec, 20_000, &mut stream(1, "selftest-radius")).unwrap();
        let r99 = {
            let mut s = draws.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s[s.len() - 1] * 1.5
        };
        let cdf = QuadratureCdf::new(n, d, 1.0, r99, 4000);
        let ks = ks_statistic(&mut draws, |x| cdf.eval(x));
        all &= check(&format!("kernel CDF agreement N={n} D={d}"), ks < 0.015, format!("KS {ks:.4}"));
    }

    // Gaussian limit: D=2048, sigma=0.5, N=64 per-coordinate std
    {
        let n = 64;
        let spec = AugmentedKernelSpec::new(n, 2048, 0.5).unwrap();
        let mut rng = stream(2, "selftest-gauss");
        let mut sum_sq = 0.0f64;
        let samples = 20_000;
        for _ in 0..samples {
            let v = sample_uniform_angle(n, &mut rng).unwrap();
            let r = sample_radius(&spec, 1, &mut rng).unwrap()[0];
            sum_sq += (v[0] * r).powi(2);
        }
        let std = (sum_sq / samples as f64).sqrt();
        all &= check(
            "Gaussian limit per-coordinate std",
            (std - 0.5).abs() / 0.5 < 0.02,
            format!("std {std:.4} vs 0.5"),
        );
    }

    // schedule golden values
    {
        let cfg = ScheduleConfig { s0: 10, s1: 100, total_steps: 300, kind: ScheduleKind::Sinusoidal };
        let got: Vec<u32> = [0, 100, 300].iter().map(|&k| cfg.steps_at(k).unwrap()).collect();
        all &= check("sinusoidal schedule golden values", got == vec![11, 58, 101], format!("{got:?}"));
        let exp = ScheduleConfig { kind: ScheduleKind::Exponential, s1: 1280, total_steps: 800, ..cfg };
        let got: Vec<u32> = [0, 100, 800].iter().map(|&k| exp.steps_at(k).unwrap()).collect();
        all &= check("exponential schedule golden values", got == vec![11, 21, 1281], format!("{got:?}"));
    }

    // loss identities
    {
        let a = Array4::from_elem((1, 1, 1, 3), 1.0f64);
        let b = Array4::zeros((1, 1, 1, 3));
        let d0 = pseudo_huber(&a, &a, 1.0).unwrap();
        let d1 = pseudo_huber(&a, &b, 1.0).unwrap();
        all &= check("pseudo-Huber identity", d0 == 0.0, format!("d(a,a) {d0}"));
        all &= check("pseudo-Huber hand value", (d1 - 1.0).abs() < 1e-12, format!("d {d1}"));
    }

    // boundary condition on a fresh model
    {
        let cfg = NetworkConfig { base_channels: 4, depth: 2, noise_embedding_dim: 8, use_attention_gate: false };
        let f = ConsistencyFunction::<f64>::new(cfg, 0.002, 0.5, &mut stream(3, "selftest-model")).unwrap();
        let mut rng = stream(4, "selftest-img");
        let mut max = 0.0f64;
        for _ in 0..20 {
            let x = Array4::from_shape_fn((1, 1, 8, 8), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let y = Array4::from_shape_fn((1, 1, 8, 8), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let out = f.apply(&x, &[f.sigma_min], &y).unwrap();
            max = max.max((&out - &x).iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        all &= check("boundary condition at sigma_min", max < 1e-5, format!("max dev {max:.2e}"));
    }

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn write_file_manifest(dir: &Path) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "files.txt")
        .collect();
    names.sort();
    fs::write(dir.join("files.txt"), names.join("\n") + "\n")?;
    Ok(())
}
