//! Acceptance run over the ten primary criteria.
//!
//! Every criterion runs in sequence inside one test and prints one
//! `PASS`/`FAIL` line on stderr (bypassing output capture), followed by the
//! measurements it was judged on. The test fails if any criterion fails.
//!
//! Criterion 5 trains for 5000 iterations through the CLI and takes roughly
//! half an hour on a single core.

use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use peel4d::checkpoint::Checkpoint;
use peel4d::frames;
use peel4d::synthetic::{self, SyntheticScene};
use peel4d_core::cache::{self, CachedRenderer, FrameCache, Precision};
use peel4d_core::carve::{carve_volume, VoxelGrid};
use peel4d_core::grid::{FeaturePlaneSet, GridConfig};
use peel4d_core::image::{Image, Mask};
use peel4d_core::loss::{self, psnr, LossWeights, MaskLossMode};
use peel4d_core::model::{make_splat, ModelConfig, SceneModel, SourceViews};
use peel4d_core::nn::{EncodedImage, HeadConfig, ImageFeatureMode};
use peel4d_core::render::{self, Splat, K_INFERENCE, K_TRAIN};
use peel4d_core::scene::{Aabb, PointCloudFrame, SceneSequence};
use peel4d_core::sh;
use peel4d_core::{Camera, RadiusLimits, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn run(id: u32, name: &'static str, f: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    report(&format!("{} [{id:>2}] {name} ({:.1}s): {detail}", if passed { "PASS" } else { "FAIL" }, elapsed.as_secs_f64()));
    Outcome { id, name, passed, detail }
}

fn gate(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. depth peeling with K = N against the full-sort oracle

fn random_camera(rng: &mut ChaCha8Rng, size: u32) -> Camera {
    let theta = rng.gen_range(0.0..2.0 * PI);
    let phi = rng.gen_range(-1.2..1.2f64);
    let d = rng.gen_range(2.5..5.0);
    let eye = Vec3::new(d * phi.cos() * theta.sin(), d * phi.sin(), d * phi.cos() * theta.cos());
    let focal = rng.gen_range(30.0..90.0);
    Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), focal, size, size, 0.1, 20.0).unwrap()
}

fn criterion_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut max_layers = 0;
    let limits = RadiusLimits { min_px: 0.5, max_px: 12.0 };
    for _ in 0..50 {
        let n = rng.gen_range(1..=1000);
        let cam = random_camera(&mut rng, 64);
        let mut splats = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (s, _) = make_splat(&cam, x, rng.gen_range(0.01..0.15), rng.gen_range(0.01..0.99), limits);
            splats.push(s);
            colors.push([rng.gen(), rng.gen(), rng.gen()]);
        }
        let bg = [rng.gen(), rng.gen(), rng.gen()];
        let peel = render::depth_peel(&splats, 64, 64, n);
        max_layers = max_layers.max(peel.max_depth_complexity());
        let ours = render::composite(&peel, &colors, bg);
        let oracle = render::oracle_full_sort_render(&splats, &colors, 64, 64, n, bg);
        for (a, b) in ours.color_raw.iter().zip(&oracle.color_raw).chain(ours.alpha.iter().zip(&oracle.alpha)) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate(worst <= 1e-12 && secs < 60.0, format!("max |diff| {worst:.2e} over 50 scenes (deepest pixel {max_layers} layers), {secs:.1}s"))
}

// ---------------------------------------------------------------------------
// 2. end-to-end gradient audit

struct AuditScene {
    model: SceneModel,
    cameras: Vec<Camera>,
    raw: Vec<Image>,
    images: Vec<EncodedImage>,
    target: Camera,
    gt: Vec<f64>,
    gt_mask: Vec<f64>,
}

const AUDIT_WEIGHTS: LossWeights = LossWeights { lpips: 0.3, msk: 0.5 };

impl AuditScene {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bbox = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let n = 48;
        let positions = (0..n).map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect();
        let dynamic = (0..n).map(|i| i % 3 == 0).collect();
        let scene = SceneSequence::new(bbox, vec![PointCloudFrame::new(0, positions, dynamic).unwrap()]).unwrap();
        let mut cfg = ModelConfig::for_frames(1);
        cfg.grid = GridConfig { spatial_res: 6, time_res: 2, channels: 2 };
        cfg.heads = HeadConfig { hidden_width: 12, hidden_layers: 2, sh_degree: 2, image_feature: ImageFeatureMode::Passthrough, r_min: 1e-4 };
        cfg.k = 8;
        cfg.num_sources = 3;
        cfg.background = [0.1, 0.2, 0.3];
        let mut model = SceneModel::new(scene, cfg, &mut rng);
        model.planes = FeaturePlaneSet::random(cfg.grid, &mut rng);
        for v in model.planes.params_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        model.heads.set_initial_radius(0.1);
        let up = Vec3::new(0.0, 1.0, 0.0);
        let cameras: Vec<Camera> = (0..4)
            .map(|i| {
                let a = i as f64 * 1.4;
                Camera::look_at(Vec3::new(3.0 * a.cos(), 0.8, 3.0 * a.sin()), Vec3::ZERO, up, 20.0, 16, 16, 0.1, 10.0).unwrap()
            })
            .collect();
        let raw: Vec<Image> = (0..4)
            .map(|v| Image::from_fn(16, 16, |x, y| [x as f64 / 15.0, y as f64 / 15.0, 0.2 + 0.15 * v as f64]))
            .collect();
        let images = raw.iter().map(|im| model.encode(im)).collect();
        let target = Camera::look_at(Vec3::new(2.4, 1.1, 1.6), Vec3::ZERO, up, 20.0, 16, 16, 0.1, 10.0).unwrap();
        let gt = (0..16 * 16 * 3).map(|_| rng.gen()).collect();
        let gt_mask = (0..16 * 16).map(|i| ((i % 16) > 7) as u8 as f64).collect();
        Self { model, cameras, raw, images, target, gt, gt_mask }
    }

    fn sources(&self) -> SourceViews<'_> {
        SourceViews { cameras: &self.cameras, images: &self.images }
    }

    fn loss(&self) -> (f64, u64) {
        let fwd = self.model.forward(0, &self.target, &self.sources());
        let t = loss::total_loss(&fwd.image.color, &self.gt, 16, 16, Some((&fwd.mask, &self.gt_mask)), AUDIT_WEIGHTS, MaskLossMode::Complement);
        (t.total, self.model.branch_signature(&fwd, &self.sources()))
    }
}

#[derive(Clone, Copy)]
enum Param {
    Plane(usize),
    Head(usize),
    Position(usize, usize),
}

impl AuditScene {
    fn get(&self, p: Param) -> f64 {
        match p {
            Param::Plane(i) => self.model.planes.param(i),
            Param::Head(i) => *self.model.heads.params().nth(i).unwrap(),
            Param::Position(i, a) => self.model.scene.frames[0].positions[i][a],
        }
    }

    fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::Plane(i) => *self.model.planes.param_mut(i) = v,
            Param::Head(i) => {
                *self.model.heads.params_mut().nth(i).unwrap() = v;
                self.images = self.raw.iter().map(|im| self.model.encode(im)).collect();
            }
            Param::Position(i, a) => {
                let q = &mut self.model.scene.frames[0].positions[i];
                match a {
                    0 => q.x = v,
                    1 => q.y = v,
                    _ => q.z = v,
                }
            }
        }
    }

    /// Central difference, or `None` when either side changes the discrete
    /// structure of the render (coverage, ordering, activation pattern).
    fn central(&mut self, p: Param, eps: f64, sig: u64) -> Option<f64> {
        let x0 = self.get(p);
        self.set(p, x0 + eps);
        let (lp, sp) = self.loss();
        self.set(p, x0 - eps);
        let (lm, sm) = self.loss();
        self.set(p, x0);
        (sp == sig && sm == sig).then(|| (lp - lm) / (2.0 * eps))
    }
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let mut sc = AuditScene::new(2024);
    let fwd = sc.model.forward(0, &sc.target, &sc.sources());
    let (_, dc, dm) = loss::total_loss_with_grad(&fwd.image.color, &sc.gt, 16, 16, Some((&fwd.mask, &sc.gt_mask)), AUDIT_WEIGHTS, MaskLossMode::Complement);
    let grad = sc.model.backward(&fwd, &dc, Some(&dm), &sc.sources());
    let (_, sig) = sc.loss();
    let eps = 1e-4;
    let heads: Vec<f64> = grad.heads.params().copied().collect();
    let (ng, ns, nb) = (sc.model.heads.geometry.num_params(), sc.model.heads.sh.num_params(), sc.model.heads.blend.num_params());
    let npts = sc.model.scene.frames[0].len();
    let groups: [(&str, Box<dyn Fn(&mut ChaCha8Rng) -> Param>); 5] = [
        ("planes", Box::new(|r: &mut ChaCha8Rng| Param::Plane(r.gen_range(0..grad.planes.num_params())))),
        ("geometry head", Box::new(move |r: &mut ChaCha8Rng| Param::Head(r.gen_range(0..ng)))),
        ("SH head", Box::new(move |r: &mut ChaCha8Rng| Param::Head(ng + r.gen_range(0..ns)))),
        ("blend head", Box::new(move |r: &mut ChaCha8Rng| Param::Head(ng + ns + r.gen_range(0..nb)))),
        ("positions", Box::new(move |r: &mut ChaCha8Rng| Param::Position(r.gen_range(0..npts), r.gen_range(0..3)))),
    ];
    let analytic = |p: Param| match p {
        Param::Plane(i) => grad.planes.param(i),
        Param::Head(i) => heads[i],
        Param::Position(i, a) => grad.positions[i][a],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut summary = Vec::new();
    let mut ok = true;
    for (name, draw) in &groups {
        let (mut checked, mut redrawn, mut worst) = (0, 0, 0.0f64);
        let mut seen = std::collections::HashSet::new();
        let mut attempts = 0;
        while checked < 30 && attempts < 20_000 {
            attempts += 1;
            let p = draw(&mut rng);
            let key = match p {
                Param::Plane(i) | Param::Head(i) => i * 3,
                Param::Position(i, a) => i * 3 + a,
            };
            let an = analytic(p);
            // untouched entries have an exactly-zero gradient; audit the live ones
            if an == 0.0 || !seen.insert(key) {
                continue;
            }
            match sc.central(p, eps, sig) {
                Some(fd) => {
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max(err);
                    checked += 1;
                }
                None => redrawn += 1,
            }
        }
        ok &= checked >= 30 && worst < 1e-4;
        summary.push(format!("{name}: {checked} probes, max rel {worst:.1e}, {redrawn} redrawn"));
    }
    let secs = start.elapsed().as_secs_f64();
    gate(ok && secs < 300.0, format!("eps 1e-4, 16x16, {npts} points; {}", summary.join("; ")))
}

// ---------------------------------------------------------------------------
// 3. compositing invariants

fn criterion_compositing() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut bound_violations, mut worst_insert, mut dominance_failures) = (0usize, 0.0f64, 0usize);
    for _ in 0..10_000 {
        let n = rng.gen_range(0..12);
        let mut splats: Vec<Splat> = (0..n)
            .map(|_| Splat {
                u: rng.gen_range(-0.5..3.5),
                v: rng.gen_range(-0.5..3.5),
                depth: rng.gen_range(0.5..5.0),
                radius_px: rng.gen_range(0.5..3.0),
                density: rng.gen_range(0.0..1.0),
                visible: true,
            })
            .collect();
        let mut colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let bg = [rng.gen(), rng.gen(), rng.gen()];
        let k = n + 2;
        let base = render::composite(&render::depth_peel(&splats, 4, 4, k), &colors, bg);
        bound_violations += base.alpha.iter().filter(|&&a| !(0.0..=1.0).contains(&a)).count();

        let mut with_zero = splats.clone();
        with_zero.push(Splat { u: rng.gen_range(0.0..3.0), v: rng.gen_range(0.0..3.0), depth: rng.gen_range(0.5..5.0), radius_px: rng.gen_range(0.5..3.0), density: 0.0, visible: true });
        let mut zero_colors = colors.clone();
        zero_colors.push([rng.gen(), rng.gen(), rng.gen()]);
        let inserted = render::composite(&render::depth_peel(&with_zero, 4, 4, k), &zero_colors, bg);
        for (a, b) in base.color_raw.iter().zip(&inserted.color_raw).chain(base.alpha.iter().zip(&inserted.alpha)) {
            worst_insert = worst_insert.max((a - b).abs());
        }

        let front = [rng.gen(), rng.gen(), rng.gen()];
        splats.push(Splat { u: 1.0, v: 2.0, depth: 0.25, radius_px: rng.gen_range(0.5..3.0), density: 1.0, visible: true });
        colors.push(front);
        let dom = render::composite(&render::depth_peel(&splats, 4, 4, k), &colors, bg);
        let p = (2 * 4 + 1) * 3;
        if dom.color_raw[p..p + 3] != front || dom.alpha[2 * 4 + 1] != 1.0 {
            dominance_failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate(
        bound_violations == 0 && worst_insert <= 1e-12 && dominance_failures == 0 && secs < 60.0,
        format!("10000 cases: {bound_violations} weight-bound violations, alpha=0 insertion max |diff| {worst_insert:.1e}, {dominance_failures} dominance failures"),
    )
}

// ---------------------------------------------------------------------------
// 4. spherical harmonics

fn criterion_sh() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let nb = sh::num_coeffs(3);
    let samples = 1_000_000;
    let mut gram = vec![0.0; nb * nb];
    let mut y = vec![0.0; nb];
    for _ in 0..samples {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).sqrt();
        sh::basis(3, Vec3::new(s * phi.cos(), s * phi.sin(), z), &mut y);
        for i in 0..nb {
            for j in i..nb {
                gram[i * nb + j] += y[i] * y[j];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..nb {
        for j in i..nb {
            let v = gram[i * nb + j] * 4.0 * PI / samples as f64;
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }

    // one splat at the origin seen head-on from two directions at equal distance
    let render_from = |degree: usize, eye: Vec3| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bbox = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let pts = vec![Vec3::ZERO, Vec3::new(0.0, 0.25, 0.0), Vec3::new(0.0, -0.25, 0.0)];
        let scene = SceneSequence::new(bbox, vec![PointCloudFrame::new(0, pts, vec![false; 3]).unwrap()]).unwrap();
        let mut cfg = ModelConfig::for_frames(1);
        cfg.grid = GridConfig { spatial_res: 4, time_res: 2, channels: 2 };
        cfg.heads = HeadConfig { hidden_width: 8, hidden_layers: 1, sh_degree: degree, image_feature: ImageFeatureMode::Passthrough, r_min: 1e-4 };
        cfg.num_sources = 1;
        let mut model = SceneModel::new(scene, cfg, &mut rng);
        model.planes = FeaturePlaneSet::random(cfg.grid, &mut rng);
        model.heads.set_initial_radius(0.2);
        let src = Camera::look_at(Vec3::new(0.0, 3.0, 0.5), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 20.0, 16, 16, 0.1, 10.0).unwrap();
        let img = model.encode(&Image::from_fn(16, 16, |x, y| [x as f64 / 15.0, 0.5, y as f64 / 15.0]));
        let cams = [src];
        let images = [img];
        let target = Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 20.0, 16, 16, 0.1, 10.0).unwrap();
        model.forward(0, &target, &SourceViews { cameras: &cams, images: &images }).image.color
    };
    let (a, b) = (Vec3::new(0.0, 0.0, 3.0), Vec3::new(3.0, 0.0, 0.0));
    let identical = render_from(0, a) == render_from(0, b);
    let control_differs = render_from(2, a) != render_from(2, b);
    let secs = start.elapsed().as_secs_f64();
    gate(
        worst < 0.02 && identical && control_differs && secs < 60.0,
        format!("Gram matrix through L=3 max deviation {worst:.4} (1e6 samples); degree-0 renders identical: {identical} (degree-2 control differs: {control_differs})"),
    )
}

// ---------------------------------------------------------------------------
// 5–9 on the trained synthetic scene

fn peel4d_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peel4d"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = peel4d_bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("peel4d {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn held_out_camera() -> Camera {
    synthetic::ring_camera(22.5f64.to_radians(), 128)
}

struct Trained {
    ckpt: Checkpoint,
    scene: SyntheticScene,
}

impl Trained {
    fn sources(&self, frame: usize) -> Vec<EncodedImage> {
        self.ckpt.sources.images[frame].iter().map(|im| self.ckpt.model.encode(im)).collect()
    }

    fn gt(&self, cam: &Camera, frame: usize) -> Vec<f64> {
        self.scene.render(cam, frame).0.to_f64()
    }
}

fn train_synthetic(root: &Path) -> Result<(Trained, String), String> {
    let data = root.join("data");
    let ckpt_path = root.join("model.ckpt");
    run_cli(&["generate", "--views", "8", "--frames", "10", "--res", "128", "--seed", "7", "--out", data.to_str().unwrap()])?;
    let start = Instant::now();
    run_cli(&["train", "--data", data.to_str().unwrap(), "--iters", "5000", "--out", ckpt_path.to_str().unwrap()])?;
    let train_secs = start.elapsed().as_secs_f64();
    let ckpt = Checkpoint::load(&ckpt_path).map_err(|e| e.to_string())?;
    let scene = SyntheticScene::from_seed(10, 7);
    Ok((Trained { ckpt, scene }, format!("training took {:.1} min", train_secs / 60.0)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_overfit(t: &Trained, train_note: &str, total_secs: f64) -> Verdict {
    let model = &t.ckpt.model;
    let cams = &t.ckpt.sources.cameras;
    let held = held_out_camera();
    let (mut train_psnr, mut held_psnr) = (Vec::new(), Vec::new());
    for f in 0..model.scene.num_frames() {
        let enc = t.sources(f);
        let src = SourceViews { cameras: cams, images: &enc };
        for (v, cam) in cams.iter().enumerate() {
            let r = model.forward(f, cam, &src);
            train_psnr.push(psnr(&r.image.color, &t.ckpt.sources.images[f][v].to_f64()));
        }
        let r = model.forward(f, &held, &src);
        held_psnr.push(psnr(&r.image.color, &t.gt(&held, f)));
    }
    let (tr, ho) = (mean(&train_psnr), mean(&held_psnr));
    gate(
        tr >= 30.0 && ho >= 25.0 && total_secs < 7200.0,
        format!("train-view PSNR {tr:.2} dB (80 images), held-out PSNR {ho:.2} dB (22.5 deg offset, 10 frames); {train_note}"),
    )
}

fn cached_psnrs(t: &Trained, caches: &[FrameCache], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let held = held_out_camera();
    let mut r = CachedRenderer::new();
    let mut images = Vec::new();
    let mut vs_gt = Vec::new();
    for (f, c) in caches.iter().enumerate() {
        let img = r.render(c, &held, k).color.clone();
        vs_gt.push(psnr(&img, &t.gt(&held, f)));
        images.push(img);
        for cam in &t.ckpt.sources.cameras {
            images.push(r.render(c, cam, k).color.clone());
        }
    }
    (images, vs_gt)
}

fn criterion_fp16(t: &Trained, f32_caches: &[FrameCache], f16_caches: &[FrameCache]) -> Verdict {
    let (a, gt_a) = cached_psnrs(t, f32_caches, K_INFERENCE);
    let (b, gt_b) = cached_psnrs(t, f16_caches, K_INFERENCE);
    let between = mean(&a.iter().zip(&b).map(|(x, y)| psnr(x, y)).collect::<Vec<_>>());
    let (pa, pb) = (mean(&gt_a), mean(&gt_b));
    let degradation = pa - pb;
    gate(
        between >= 40.0 && degradation < 0.1,
        format!("PSNR(f32, f16) {between:.2} dB over 90 renders; vs ground truth f32 {pa:.3} dB, f16 {pb:.3} dB (degradation {degradation:.4} dB)"),
    )
}

fn criterion_k(t: &Trained, caches: &[FrameCache]) -> Verdict {
    let (_, p12) = cached_psnrs(t, caches, K_INFERENCE);
    let (_, p15) = cached_psnrs(t, caches, K_TRAIN);
    let (a, b) = (mean(&p12), mean(&p15));
    gate((a - b).abs() < 0.1, format!("held-out PSNR K=12 {a:.3} dB, K=15 {b:.3} dB (|diff| {:.4} dB)", (a - b).abs()))
}

fn time_per_frame(mut f: impl FnMut(usize), reps: usize) -> f64 {
    f(0);
    let start = Instant::now();
    for i in 0..reps {
        f(i);
    }
    start.elapsed().as_secs_f64() / reps as f64
}

fn criterion_speed(t: &Trained, caches: &[FrameCache]) -> Verdict {
    let model = &t.ckpt.model;
    let cams = frames::orbit(&t.ckpt, 8, 128, 128);
    let enc = t.sources(0);
    let src = SourceViews { cameras: &t.ckpt.sources.cameras, images: &enc };
    let uncached = time_per_frame(|i| drop(model.forward(0, &cams[i % 8], &src)), 8);
    let mut r = CachedRenderer::new();
    let cached = time_per_frame(|i| {
        r.render(&caches[0], &cams[i % 8], K_INFERENCE);
    }, 40);
    let speedup = uncached / cached;

    // 50k points: the trained frame tiled with jittered copies
    let mut big = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let base = big.scene.frames[0].clone();
    while big.scene.frames[0].len() < 50_000 {
        let i = rng.gen_range(0..base.len());
        let p = base.positions[i] + Vec3::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
        big.scene.frames[0].positions.push(p);
        big.scene.frames[0].dynamic.push(base.dynamic[i]);
    }
    let big_cache = cache::quantize_fp16(&cache::precompute(&big, 0, &src), false).0;
    let cams256 = frames::orbit(&t.ckpt, 8, 256, 256);
    let fps_50k = 1.0 / time_per_frame(|i| {
        r.render(&big_cache, &cams256[i % 8], K_INFERENCE);
    }, 16);
    let threads = rayon::current_num_threads();
    let absolute = if threads >= 8 {
        format!("absolute target {} ({fps_50k:.1} FPS at 256x256, 50k points, {threads} threads)", if fps_50k >= 30.0 { "met" } else { "MISSED" })
    } else {
        format!("{fps_50k:.1} FPS at 256x256 with 50k points on {threads} thread(s); the 30 FPS target assumes 8 cores and is not gated here")
    };
    let abs_ok = threads < 8 || fps_50k >= 30.0;
    gate(
        speedup >= 5.0 && abs_ok,
        format!("uncached {:.1} ms, cached {:.2} ms per 128x128 frame, speedup {speedup:.1}x; {absolute}", uncached * 1e3, cached * 1e3),
    )
}

fn dir_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism(root: &Path) -> Verdict {
    let mut runs = Vec::new();
    for r in 0..2 {
        let dir = root.join(format!("run{r}"));
        let s = |p: &str| dir.join(p).to_str().unwrap().to_owned();
        run_cli(&["generate", "--views", "8", "--frames", "10", "--res", "128", "--seed", "7", "--out", &s("data")])?;
        run_cli(&["train", "--data", &s("data"), "--iters", "100", "--seed", "3", "--out", &s("m.ckpt")])?;
        run_cli(&["render", "--ckpt", &s("m.ckpt"), "--orbit", "4", "--out", &s("frames")])?;
        runs.push((dir_bytes(&dir.join("data")), std::fs::read(dir.join("m.ckpt")).unwrap(), dir_bytes(&dir.join("frames"))));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let ckpt = Checkpoint::from_bytes(&a.1).map_err(|e| e.to_string())?;
    let render_twice: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let c = frames::build_cache(&ckpt, 3, Precision::F16);
            cache::render_cached(&c, &ckpt.sources.cameras[2], K_INFERENCE).color
        })
        .collect();
    let same_data = a.0 == b.0;
    let same_ckpt = a.1 == b.1;
    let same_frames = a.2 == b.2;
    let same_render = render_twice[0].iter().zip(&render_twice[1]).all(|(x, y)| x.to_bits() == y.to_bits());
    gate(
        same_data && same_ckpt && same_frames && same_render,
        format!(
            "datasets identical: {same_data} ({} files); checkpoints identical: {same_ckpt} ({} bytes, 100 iterations); rendered PNGs identical: {same_frames}; in-process renders bit-identical: {same_render}",
            a.0.len(),
            a.1.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. space carving

fn criterion_carving() -> Verdict {
    let scene = SyntheticScene::from_seed(1, 7);
    let c = scene.sphere_center(0.0);
    let r = synthetic::SPHERE_RADIUS;
    // eight views, alternating ±20° elevation every 45° of azimuth
    let cams: Vec<Camera> = (0..8)
        .map(|i| {
            let az = i as f64 * PI / 4.0;
            let el = if i % 2 == 0 { 20f64 } else { -20f64 }.to_radians();
            let eye = c + Vec3::new(3.0 * el.cos() * az.sin(), 3.0 * el.sin(), 3.0 * el.cos() * az.cos());
            Camera::look_at(eye, c, Vec3::new(0.0, 1.0, 0.0), synthetic::FOCAL_AT_128, 128, 128, 0.1, 10.0).unwrap()
        })
        .collect();
    let masks: Vec<Mask> = cams.iter().map(|cam| scene.render(cam, 0).1).collect();
    let bbox = synthetic::scene_bbox();
    let res = 64;
    let grid = carve_volume(&masks, &cams, &bbox, res).map_err(|e| e.to_string())?;
    let e = bbox.extent();
    let half = Vec3::new(e.x / res as f64 / 2.0, e.y / res as f64 / 2.0, e.z / res as f64 / 2.0);
    let inside = |p: Vec3| (p - c).norm() < r;
    let mut truth = VoxelGrid { occupied: vec![false; res * res * res], ..grid.clone() };
    let (mut interior, mut missed) = (0, 0);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let p = grid.center(i, j, k);
                truth.occupied[grid.index(i, j, k)] = inside(p);
                let corners_inside = (0..8).all(|b| {
                    let s = |bit: usize| if b >> bit & 1 == 1 { 1.0 } else { -1.0 };
                    inside(Vec3::new(p.x + s(0) * half.x, p.y + s(1) * half.y, p.z + s(2) * half.z))
                });
                if corners_inside {
                    interior += 1;
                    if !grid.occupied[grid.index(i, j, k)] {
                        missed += 1;
                    }
                }
            }
        }
    }
    let within = |i: usize, j: usize, k: usize| {
        let r = |a: usize| a.saturating_sub(2)..=(a + 2).min(res - 1);
        r(k).any(|kk| r(j).any(|jj| r(i).any(|ii| truth.occupied[truth.index(ii, jj, kk)])))
    };
    let (mut carved, mut outside) = (0, 0);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                if grid.occupied[grid.index(i, j, k)] {
                    carved += 1;
                    if !within(i, j, k) {
                        outside += 1;
                    }
                }
            }
        }
    }
    gate(
        missed == 0 && outside == 0 && interior > 0,
        format!("{res}^3 grid, 8 views: {interior} interior voxels, {missed} carved away; {carved} kept, {outside} beyond the 2-voxel dilation of {} sphere voxels", truth.count()),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut outcomes = vec![
        run(1, "oracle equivalence", criterion_oracle),
        run(2, "gradient audit", criterion_gradients),
        run(3, "compositing invariants", criterion_compositing),
        run(4, "SH correctness", criterion_sh),
    ];

    let train_start = Instant::now();
    let trained = train_synthetic(tmp.path());
    let train_secs = train_start.elapsed().as_secs_f64();
    match &trained {
        Ok((t, note)) => {
            let total = train_secs;
            outcomes.push(run(5, "synthetic overfit", || criterion_overfit(t, note, total)));
            let f32_caches: Vec<FrameCache> = (0..10).map(|f| frames::build_cache(&t.ckpt, f, Precision::F32)).collect();
            let f16_caches: Vec<FrameCache> = (0..10).map(|f| frames::build_cache(&t.ckpt, f, Precision::F16)).collect();
            outcomes.push(run(6, "fp16 cache fidelity", || criterion_fp16(t, &f32_caches, &f16_caches)));
            outcomes.push(run(7, "K reduction", || criterion_k(t, &f16_caches)));
            outcomes.push(run(8, "cache speedup", || criterion_speed(t, &f16_caches)));
        }
        Err(e) => {
            for (id, name) in [(5, "synthetic overfit"), (6, "fp16 cache fidelity"), (7, "K reduction"), (8, "cache speedup")] {
                let e = e.clone();
                outcomes.push(run(id, name, move || Err(format!("training failed: {e}"))));
            }
        }
    }
    outcomes.push(run(9, "determinism", || criterion_determinism(tmp.path())));
    outcomes.push(run(10, "space carving", criterion_carving));

    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| format!("{} {}: {}", o.id, o.name, o.detail)).collect();
    report(&format!(
        "acceptance: {}/{} criteria passed in {:.1} min",
        outcomes.len() - failed.len(),
        outcomes.len(),
        start.elapsed().as_secs_f64() / 60.0
    ));
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
