//! The inference path shared by `render`, `benchmark` and `serve`: per-frame
//! caches built from a checkpoint and rendered without network evaluation.

use std::f64::consts::PI;

use peel4d_core::cache::{self, FrameCache, Precision};
use peel4d_core::image::Image;
use peel4d_core::model::{SceneModel, SourceViews};
use peel4d_core::render::{Composite, K_INFERENCE};
use peel4d_core::{Camera, Mat3, Vec3};

use crate::checkpoint::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub precision: Precision,
    pub k: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { precision: Precision::F16, k: K_INFERENCE }
    }
}

/// Builds the cache of `frame` at the configured precision.
pub fn build_cache(ckpt: &Checkpoint, frame: usize, precision: Precision) -> FrameCache {
    let model: &SceneModel = &ckpt.model;
    let encoded: Vec<_> = ckpt.sources.images[frame].iter().map(|im| model.encode(im)).collect();
    let sources = SourceViews { cameras: &ckpt.sources.cameras, images: &encoded };
    let full = cache::precompute(model, frame, &sources);
    match precision {
        Precision::F32 => full,
        Precision::F16 => cache::quantize_fp16(&full, false).0,
        Precision::F16KeepPositions => cache::quantize_fp16(&full, true).0,
    }
}

pub fn composite_to_image(c: &Composite) -> Image {
    Image::from_f64(c.width, c.height, &c.color)
}

/// RGB8 bytes of a rendered frame.
pub fn composite_to_rgb8(c: &Composite) -> Vec<u8> {
    c.color.iter().map(|&v| crate::pngio::to_u8(v)).collect()
}

/// Camera with the given world-to-camera pose and the intrinsics of
/// `template` rescaled to `width × height`.
pub fn posed_camera(template: &Camera, rotation: Mat3, translation: Vec3, width: u32, height: u32) -> peel4d_core::Result<Camera> {
    let scaled = template.with_resolution(width, height);
    Camera::new(scaled.fx, scaled.fy, scaled.cx, scaled.cy, rotation, translation, width, height, scaled.near, scaled.far)
}

/// `n` cameras circling the scene at the mean distance and height of the
/// source cameras, looking at the bounding-box center.
pub fn orbit(ckpt: &Checkpoint, n: usize, width: u32, height: u32) -> Vec<Camera> {
    let cams = &ckpt.sources.cameras;
    let target = ckpt.model.scene.bbox.center();
    let centers: Vec<Vec3> = cams.iter().map(Camera::center).collect();
    let m = centers.len().max(1) as f64;
    let radius = centers.iter().map(|c| ((c.x - target.x).powi(2) + (c.z - target.z).powi(2)).sqrt()).sum::<f64>() / m;
    let height_y = centers.iter().map(|c| c.y).sum::<f64>() / m;
    let template = cams[0].with_resolution(width, height);
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            let eye = Vec3::new(target.x + radius * a.sin(), height_y, target.z + radius * a.cos());
            let c = Camera::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0), template.fx, width, height, template.near, template.far)
                .expect("orbit camera is valid");
            Camera { fy: template.fy, cx: template.cx, cy: template.cy, ..c }
        })
        .collect()
}
