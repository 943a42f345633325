//! Command-line entry points.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use peel4d_core::cache::{CachedRenderer, Precision};
use peel4d_core::scene::frame_at;

use crate::bench;
use crate::checkpoint::Checkpoint;
use crate::dataset;
use crate::frames::{self, InferenceConfig};
use crate::pipeline::{self, Recipe, TrainOutputs};
use crate::pngio;
use crate::serve::{self, FrameServer, ServeConfig};
use crate::synthetic::{self, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const THREADS_ENV: &str = "PEEL4D_THREADS";

#[derive(Debug, Parser)]
#[command(name = "peel4d", version, about = "Train and render dynamic point-cloud scenes from multi-view video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F16,
    /// Half precision except positions.
    F16Positions,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F16 => Precision::F16,
            PrecisionArg::F16Positions => Precision::F16KeepPositions,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic multi-view video dataset.
    Generate {
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Image width and height in pixels.
        #[arg(long, default_value_t = 128)]
        res: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5000)]
        iters: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics log, one JSON object per iteration [default: <out>.metrics.jsonl]
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also write the checkpoint every N iterations.
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Render a camera orbit to a PNG sequence.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of orbit frames; time sweeps from the first to the last frame.
        #[arg(long, default_value_t = 30)]
        orbit: usize,
        #[arg(long)]
        out: PathBuf,
        /// Output width and height [default: source camera size]
        #[arg(long)]
        res: Option<u32>,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F16)]
        precision: PrecisionArg,
        /// Peeling passes.
        #[arg(long, default_value_t = peel4d_core::render::K_INFERENCE)]
        k: usize,
    },
    /// Time cached rendering and write a JSON report.
    Benchmark {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256])]
        resolutions: Vec<u32>,
        #[arg(long, default_value_t = 50)]
        repetitions: usize,
        /// Cameras on the orbit the repetitions cycle through.
        #[arg(long, default_value_t = 8)]
        orbit: usize,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F16)]
        precision: PrecisionArg,
        #[arg(long, default_value_t = peel4d_core::render::K_INFERENCE)]
        k: usize,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream rendered frames over WebSocket.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = crate::protocol::DEFAULT_MAX_RESOLUTION)]
        max_res: u32,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F16)]
        precision: PrecisionArg,
        #[arg(long, default_value_t = peel4d_core::render::K_INFERENCE)]
        k: usize,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_ckpt(path: &PathBuf) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate { views, frames, res, seed, out } => {
            anyhow::ensure!(views >= 2 && frames >= 1 && res >= 8, "need at least 2 views, 1 frame and 8 px");
            synthetic::generate(&SyntheticSpec { views, frames, resolution: res, seed }, &out)?;
            log::info!("wrote {views} views x {frames} frames to {}", out.display());
        }
        Command::Train { data, iters, out, seed, metrics, checkpoint_every } => {
            let ds = dataset::load_dataset(&data)?;
            let mut recipe = Recipe::for_dataset(&ds);
            recipe.seed = seed;
            recipe.train.seed = seed;
            recipe.train.iterations = iters;
            let outputs = TrainOutputs {
                metrics: Some(metrics.unwrap_or_else(|| {
                    let mut p = out.clone().into_os_string();
                    p.push(".metrics.jsonl");
                    p.into()
                })),
                checkpoint: Some(out.clone()),
                checkpoint_every,
            };
            pipeline::train(&ds, &recipe, &outputs, |r| {
                if (r.iteration + 1) % 100 == 0 {
                    log::info!("iteration {} loss {:.6}", r.iteration + 1, r.loss.total);
                }
                if r.pruned > 0 {
                    log::info!("iteration {}: pruned {} transparent points", r.iteration + 1, r.pruned);
                }
            })?;
            log::info!("wrote {}", out.display());
        }
        Command::Render { ckpt, orbit, out, res, precision, k } => {
            anyhow::ensure!(orbit > 0, "--orbit must be positive");
            let ckpt = load_ckpt(&ckpt)?;
            let src = &ckpt.sources.cameras[0];
            let (w, h) = res.map_or((src.width, src.height), |r| (r, r));
            fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            let cams = frames::orbit(&ckpt, orbit, w, h);
            let num_frames = ckpt.model.scene.num_frames();
            let frame_of = |i: usize| frame_at(if orbit > 1 { i as f64 / (orbit - 1) as f64 } else { 0.0 }, num_frames);
            let mut caches = BTreeMap::new();
            let mut renderer = CachedRenderer::new();
            for (i, cam) in cams.iter().enumerate() {
                let f = frame_of(i);
                let cache = caches.entry(f).or_insert_with(|| frames::build_cache(&ckpt, f, precision.into()));
                let img = frames::composite_to_image(renderer.render(cache, cam, k));
                let path = out.join(format!("{i:04}.png"));
                pngio::write_rgb(&path, &img).with_context(|| format!("cannot write {}", path.display()))?;
            }
            log::info!("wrote {orbit} frames to {}", out.display());
        }
        Command::Benchmark { ckpt, frame, resolutions, repetitions, orbit, precision, k, out } => {
            let ckpt = load_ckpt(&ckpt)?;
            anyhow::ensure!(frame < ckpt.model.scene.num_frames(), "frame {frame} out of range");
            anyhow::ensure!(orbit > 0 && repetitions > 0, "--orbit and --repetitions must be positive");
            let cache = frames::build_cache(&ckpt, frame, precision.into());
            let src = &ckpt.sources.cameras[0];
            let cams = frames::orbit(&ckpt, orbit, src.width, src.height);
            let report = bench::benchmark(&cache, &cams, &resolutions, repetitions, k);
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => fs::write(&p, json).with_context(|| format!("cannot write {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Command::Serve { ckpt, bind, max_res, precision, k } => {
            let ckpt = Arc::new(load_ckpt(&ckpt)?);
            let config = ServeConfig { inference: InferenceConfig { precision: precision.into(), k }, max_resolution: max_res, ..ServeConfig::default() };
            let server = Arc::new(FrameServer::new(ckpt, config));
            let listener = TcpListener::bind(&bind).with_context(|| format!("cannot bind {bind}"))?;
            let handle = serve::spawn(server, listener)?;
            log::info!("serving on ws://{}", handle.local_addr());
            eprintln!("listening on ws://{}", handle.local_addr());
            handle.wait();
        }
    }
    Ok(())
}
