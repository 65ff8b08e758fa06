//! `roadsurf`: synthetic-scene generation, elevation reconstruction runs,
//! and the view-transform benchmark.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime/data error.

use clap::{Args, Parser, Subcommand};
use roadsurf_core::config::PipelineConfig;
use roadsurf_core::error::Error;
use roadsurf_core::io::{load_json, save_json, save_pgm16, save_tensor};
use roadsurf_core::pipeline::{load_scene_dir, pipeline, write_scene_dir};
use roadsurf_core::supervision::metrics;
use roadsurf_core::synthetic::{gen_scene, GenParams};
use roadsurf_core::tensor::DenseTensor;
use roadsurf_core::viewtrans::{build_lut, gather_voxels, sample_voxels_reference};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "roadsurf", about = "BEV road-surface elevation reconstruction")]
struct Cli {
    /// Cap internal parallelism at N threads (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in profile: `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    profile: String,

    /// Config JSON path; overrides --profile.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> roadsurf_core::Result<PipelineConfig> {
        let cfg = match &self.config {
            Some(path) => load_json::<PipelineConfig>(path)?,
            None => PipelineConfig::profile(&self.profile)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory (scene/rig JSON, GT, depth,
    /// features).
    GenScene {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        bumps: usize,
        #[arg(long, default_value_t = 1)]
        potholes: usize,
        #[arg(long, default_value_t = 0)]
        cracks: usize,
        /// Maximum primitive amplitude magnitude, meters.
        #[arg(long, default_value_t = 0.05)]
        max_amplitude: f64,
        /// Fraction of GT cells masked out (sparse-label emulation).
        #[arg(long, default_value_t = 0.0)]
        gt_dropout: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a reconstruction pipeline over a scene directory and score it.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pipeline: `mono` or `stereo`.
        #[arg(long)]
        mode: String,
        /// Scene directory from gen-scene.
        #[arg(long)]
        scene: PathBuf,
        /// Weights directory; built-in reference weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Output directory (defaults to the scene directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// View-transform override: `lut` or `sampler`.
        #[arg(long)]
        vt: Option<String>,
    },
    /// Benchmark the LUT gather against the reference sampler.
    BenchVt {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Io(_) | Error::Format(_) => 2,
        Error::BehindCamera { .. } => 3,
        Error::Stage { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: failed to configure thread pool: {}", e);
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn dispatch(cmd: Command) -> roadsurf_core::Result<()> {
    match cmd {
        Command::GenScene {
            config,
            seed,
            bumps,
            potholes,
            cracks,
            max_amplitude,
            gt_dropout,
            out,
        } => {
            let cfg = config.load()?;
            if !(0.0..1.0).contains(&gt_dropout) {
                return Err(Error::arg("gt-dropout must be in [0, 1)"));
            }
            let params = GenParams {
                bumps,
                potholes,
                cracks,
                max_amplitude,
                e_bound: cfg.bins.e_bound,
                ..Default::default()
            };
            let scene = gen_scene(seed, &params)?;
            write_scene_dir(&out, &scene, &cfg, gt_dropout)?;
            println!("scene written to {}", out.display());
            Ok(())
        }
        Command::Run {
            config,
            mode,
            scene,
            weights,
            out,
            vt,
        } => {
            let mut cfg = config.load()?;
            if let Some(vt) = vt {
                cfg.projector = vt;
                cfg.validate()?;
            }
            let p = pipeline(&mode)
                .ok_or_else(|| Error::arg(format!("unknown mode `{}` (mono or stereo)", mode)))?;
            let data = load_scene_dir(&scene, &cfg)?;
            let run = p.run(&data, weights.as_deref(), &cfg)?;
            let out_dir = out.unwrap_or(scene);
            let elev = DenseTensor::from_vec(
                &[run.elevation.nx, run.elevation.ny],
                run.elevation.values.clone(),
            )?;
            save_tensor(&out_dir, &format!("elevation_{}", mode), &elev)?;
            save_pgm16(&out_dir.join(format!("elevation_{}.pgm", mode)), &elev)?;
            for (name, t) in &run.extras {
                save_tensor(&out_dir, &format!("{}_{}", name, mode), t)?;
            }
            let m = metrics(&run.elevation, &data.gt)?;
            save_json(&out_dir.join(format!("metrics_{}.json", mode)), &m)?;
            println!(
                "{}: abs_err {:.4} cm, rmse {:.4} cm, >0.5cm {:.2}% over {} cells",
                mode, m.abs_err_cm, m.rmse_cm, m.pct_gt_half_cm, m.n_cells
            );
            Ok(())
        }
        Command::BenchVt {
            config,
            reps,
            warmup,
            seed,
            out,
        } => {
            let cfg = config.load()?;
            let report = bench_vt(&cfg, reps, warmup, seed)?;
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(e.to_string()))?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &text)?;
                    println!("report written to {}", path.display());
                }
                None => println!("{}", text),
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct BenchReport {
    grid_dims: (usize, usize, usize),
    feat_dims: (usize, usize),
    c_i: usize,
    c_d: usize,
    reps: usize,
    warmup: usize,
    lut_build_ms: f64,
    gather_median_ms: f64,
    gather_p95_ms: f64,
    sampler_median_ms: f64,
    sampler_p95_ms: f64,
    max_abs_diff: f32,
}

fn splitmix(state: &mut u64) -> f32 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ((z ^ (z >> 31)) >> 40) as f32 / (1u64 << 24) as f32
}

fn percentile(sorted_ms: &[f64], q: f64) -> f64 {
    let idx = ((sorted_ms.len() as f64 - 1.0) * q).round() as usize;
    sorted_ms[idx]
}

fn bench_vt(cfg: &PipelineConfig, reps: usize, warmup: usize, seed: u64) -> roadsurf_core::Result<BenchReport> {
    if reps == 0 {
        return Err(Error::arg("bench-vt: reps must be >= 1"));
    }
    let grid = cfg.voxel_grid()?;
    let rig = cfg.rig_left();
    let stride = cfg.scales[0];
    let fd = cfg.feat_dims(stride)?;
    let mut state = seed ^ 0xdeadbeefcafef00d;
    let feats = DenseTensor::from_vec(
        &[fd.h, fd.w, cfg.c_i],
        (0..fd.h * fd.w * cfg.c_i)
            .map(|_| splitmix(&mut state) * 2.0 - 1.0)
            .collect(),
    )?;
    let mut d_raw: Vec<f32> = (0..fd.h * fd.w * cfg.depth.c_d)
        .map(|_| splitmix(&mut state) + 1e-3)
        .collect();
    for px in 0..fd.h * fd.w {
        let row = &mut d_raw[px * cfg.depth.c_d..(px + 1) * cfg.depth.c_d];
        let s: f32 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    let depths = DenseTensor::from_vec(&[fd.h, fd.w, cfg.depth.c_d], d_raw)?;

    let t0 = Instant::now();
    let lut = build_lut(&grid, &rig, fd, cfg.depth);
    let lut_build_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut gather_ms = Vec::with_capacity(reps);
    let mut sampler_ms = Vec::with_capacity(reps);
    let mut gather_out = None;
    let mut sampler_out = None;
    for i in 0..warmup + reps {
        let t = Instant::now();
        let g = gather_voxels(&lut, &feats, &depths)?;
        let dt = t.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            gather_ms.push(dt);
        }
        gather_out = Some(g);
    }
    for i in 0..warmup + reps {
        let t = Instant::now();
        let s = sample_voxels_reference(&grid, &rig, fd, cfg.depth, &feats, &depths)?;
        let dt = t.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            sampler_ms.push(dt);
        }
        sampler_out = Some(s);
    }
    gather_ms.sort_by(f64::total_cmp);
    sampler_ms.sort_by(f64::total_cmp);
    let max_abs_diff = gather_out
        .unwrap()
        .max_abs_diff(&sampler_out.unwrap());
    Ok(BenchReport {
        grid_dims: (grid.nx, grid.ny, grid.nz),
        feat_dims: (fd.h, fd.w),
        c_i: cfg.c_i,
        c_d: cfg.depth.c_d,
        reps,
        warmup,
        lut_build_ms,
        gather_median_ms: percentile(&gather_ms, 0.5),
        gather_p95_ms: percentile(&gather_ms, 0.95),
        sampler_median_ms: percentile(&sampler_ms, 0.5),
        sampler_p95_ms: percentile(&sampler_ms, 0.95),
        max_abs_diff,
    })
}
