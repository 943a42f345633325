//! Analytic multi-view video: a textured sphere flying along a parabola
//! above a checkerboard ground, ray traced exactly.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use peel4d_core::image::{Image, Mask};
use peel4d_core::scene::{time_of, Aabb};
use peel4d_core::{Camera, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, DatasetError, Manifest};
use crate::pngio;

pub const SPHERE_RADIUS: f64 = 0.25;
pub const PATH_START: Vec3 = Vec3::new(-0.5, 0.3, 0.0);
pub const PATH_END: Vec3 = Vec3::new(0.5, 0.3, 0.0);
pub const PATH_PEAK_HEIGHT: f64 = 0.35;
pub const GROUND_HALF_EXTENT: f64 = 1.0;
pub const RING_RADIUS: f64 = 3.0;
pub const RING_HEIGHT: f64 = 1.6;
pub const LOOK_AT: Vec3 = Vec3::new(0.0, 0.3, 0.0);
/// Focal length in pixels at 128 px width (about 45° field of view).
pub const FOCAL_AT_128: f64 = 154.5;
pub const SKY: [f64; 3] = [0.62, 0.74, 0.88];
pub const FPS: f64 = 30.0;
const AMBIENT: f64 = 0.35;
const NEAR: f64 = 0.1;
const FAR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub views: usize,
    pub frames: usize,
    pub resolution: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { views: 8, frames: 10, resolution: 128, seed: 7 }
    }
}

/// Scene appearance drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    pub frames: usize,
    pub sphere_color: [f64; 3],
    pub stripe_color: [f64; 3],
    pub checker_light: [f64; 3],
    pub checker_dark: [f64; 3],
    pub light: Vec3,
}

impl SyntheticScene {
    pub fn from_seed(frames: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |c: [f64; 3]| c.map(|v: f64| (v + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0));
        Self {
            frames,
            sphere_color: jitter([0.85, 0.35, 0.25]),
            stripe_color: jitter([0.95, 0.85, 0.3]),
            checker_light: jitter([0.8, 0.8, 0.75]),
            checker_dark: jitter([0.3, 0.35, 0.4]),
            light: Vec3::new(0.4, 1.0, 0.3).normalized(),
        }
    }

    /// Sphere center at normalized time `t ∈ [0, 1]`.
    pub fn sphere_center(&self, t: f64) -> Vec3 {
        let lerp = PATH_START + (PATH_END - PATH_START) * t;
        Vec3::new(lerp.x, lerp.y + PATH_PEAK_HEIGHT * 4.0 * t * (1.0 - t), lerp.z)
    }

    pub fn sphere_center_at_frame(&self, frame: usize) -> Vec3 {
        self.sphere_center(time_of(frame, self.frames))
    }

    fn shade(&self, albedo: [f64; 3], n: Vec3) -> [f64; 3] {
        let k = AMBIENT + (1.0 - AMBIENT) * n.dot(self.light).max(0.0);
        albedo.map(|a| a * k)
    }

    fn sphere_albedo(&self, n: Vec3) -> [f64; 3] {
        let lon = n.z.atan2(n.x);
        let lat = n.y.asin();
        let s = 0.5 + 0.5 * (6.0 * lon).sin() * (4.0 * lat).cos();
        mix(self.sphere_color, self.stripe_color, s)
    }

    fn ground_albedo(&self, x: f64, z: f64) -> [f64; 3] {
        let s = 0.5 + 0.5 * (PI * x / 0.25).sin() * (PI * z / 0.25).sin();
        mix(self.checker_dark, self.checker_light, s)
    }

    /// Shaded color along one ray, plus whether the first hit is the sphere
    /// and whether anything was hit at all.
    pub fn trace(&self, origin: Vec3, dir: Vec3, t: f64) -> ([f64; 3], bool, bool) {
        let c = self.sphere_center(t);
        let sphere = intersect_sphere(origin, dir, c, SPHERE_RADIUS);
        let ground = intersect_ground(origin, dir);
        match (sphere, ground) {
            (Some(ts), g) if g.is_none_or(|tg| ts <= tg) => {
                let n = (origin + dir * ts - c).normalized();
                (self.shade(self.sphere_albedo(n), n), true, true)
            }
            (_, Some(tg)) => {
                let p = origin + dir * tg;
                (self.shade(self.ground_albedo(p.x, p.z), Vec3::new(0.0, 1.0, 0.0)), false, true)
            }
            _ => (SKY, false, false),
        }
    }

    /// Image, dynamic mask and full-scene mask of one frame seen by `cam`.
    pub fn render(&self, cam: &Camera, frame: usize) -> (Image, Mask, Mask) {
        let t = time_of(frame, self.frames);
        let (w, h) = (cam.width as usize, cam.height as usize);
        let origin = cam.center();
        let mut img = Image::new(w, h);
        let mut dynamic = Mask::new(w, h);
        let mut scene = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let dir = (cam.back_project(x as f64, y as f64, 1.0) - origin).normalized();
                let (rgb, on_sphere, hit) = self.trace(origin, dir, t);
                img.set(x, y, rgb);
                dynamic.set(x, y, on_sphere);
                scene.set(x, y, hit);
            }
        }
        (img, dynamic, scene)
    }
}

fn mix(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

fn intersect_sphere(o: Vec3, d: Vec3, c: Vec3, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.dot(oc) - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

fn intersect_ground(o: Vec3, d: Vec3) -> Option<f64> {
    if d.y >= 0.0 {
        return None;
    }
    let t = -o.y / d.y;
    let p = o + d * t;
    (t > 0.0 && p.x.abs() <= GROUND_HALF_EXTENT && p.z.abs() <= GROUND_HALF_EXTENT).then_some(t)
}

/// Camera on the capture ring at `azimuth` radians.
pub fn ring_camera(azimuth: f64, resolution: u32) -> Camera {
    let eye = Vec3::new(RING_RADIUS * azimuth.sin(), RING_HEIGHT, RING_RADIUS * azimuth.cos());
    let focal = FOCAL_AT_128 * resolution as f64 / 128.0;
    Camera::look_at(eye, LOOK_AT, Vec3::new(0.0, 1.0, 0.0), focal, resolution, resolution, NEAR, FAR)
        .expect("ring cameras are valid")
}

pub fn ring_cameras(views: usize, resolution: u32) -> Vec<Camera> {
    (0..views).map(|v| ring_camera(2.0 * PI * v as f64 / views as f64, resolution)).collect()
}

/// Bounds of everything that moves or is static. The floor sits half a
/// voxel below the ground plane at 64³ so one voxel layer is centered on it.
pub fn scene_bbox() -> Aabb {
    let top = 1.0;
    Aabb::new(Vec3::new(-1.0, -top / 127.0, -1.0), Vec3::new(1.0, top, 1.0)).unwrap()
}

pub fn generate(spec: &SyntheticSpec, out: &Path) -> Result<(), DatasetError> {
    let scene = SyntheticScene::from_seed(spec.frames, spec.seed);
    let cameras = ring_cameras(spec.views, spec.resolution);
    let bbox = scene_bbox();
    let manifest = Manifest {
        views: spec.views,
        frames: spec.frames,
        fps: FPS,
        bbox: dataset::BboxJson { min: bbox.min.to_array(), max: bbox.max.to_array() },
        background: Some(SKY),
    };
    dataset::create_layout(out, &manifest)?;
    for (v, cam) in cameras.iter().enumerate() {
        dataset::write_camera(out, v, cam)?;
        for f in 0..spec.frames {
            let (img, dynamic, full) = scene.render(cam, f);
            let io = |path: &Path, r: Result<(), pngio::PngError>| r.map_err(|e| DatasetError::Png { path: path.to_owned(), message: e.to_string() });
            let p = dataset::image_path(out, v, f);
            io(&p, pngio::write_rgb(&p, &img))?;
            let p = dataset::mask_path(out, v, f);
            io(&p, pngio::write_mask(&p, &dynamic))?;
            let p = dataset::scene_mask_path(out, v, f);
            io(&p, pngio::write_mask(&p, &full))?;
        }
    }
    let p = out.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest).unwrap()).map_err(|e| DatasetError::io(&p, e))
}
