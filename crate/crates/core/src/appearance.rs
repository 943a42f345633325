//! Hybrid point color: spherical harmonics plus a softmax blend of colors
//! sampled from the nearest source views.

use alloc::vec::Vec;

use crate::camera::Camera;
use crate::linalg::Vec3;
use crate::math;

/// Number of blended source views used when none is configured.
pub const DEFAULT_NUM_SOURCES: usize = 4;

/// Stored in place of the logit of a source view that cannot see the point.
/// Finite so that it survives half-precision conversion.
pub const LOGIT_SENTINEL_F32: f32 = f32::MIN;
pub const LOGIT_SENTINEL_F16: half::f16 = half::f16::MIN;

/// Angle at `anchor` between the directions to `a` and `b`.
pub fn view_angle(anchor: Vec3, a: Vec3, b: Vec3) -> f64 {
    (a - anchor).angle_to(b - anchor)
}

/// The `n` sources whose centers are angularly closest to the target
/// center as seen from `anchor`; ties go to the lower index.
pub fn select_source_views(target: &Camera, sources: &[Camera], anchor: Vec3, n: usize) -> Vec<usize> {
    let tc = target.center();
    let centers: Vec<Vec3> = sources.iter().map(Camera::center).collect();
    select_by_centers(tc, &centers, anchor, n)
}

pub fn select_by_centers(target_center: Vec3, source_centers: &[Vec3], anchor: Vec3, n: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> =
        source_centers.iter().enumerate().map(|(i, &c)| (view_angle(anchor, c, target_center), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(n.max(1));
    ranked.into_iter().map(|(_, i)| i).collect()
}

/// Softmax over the visible entries of `logits`; invisible entries get
/// weight 0. Returns false (and all-zero weights) when nothing is visible.
pub fn softmax_visible(logits: &[f64], visible: &[bool], weights: &mut [f64]) -> bool {
    let max = logits
        .iter()
        .zip(visible)
        .filter(|(_, &v)| v)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        weights.iter_mut().for_each(|w| *w = 0.0);
        return false;
    }
    let mut sum = 0.0;
    for ((w, &l), &v) in weights.iter_mut().zip(logits).zip(visible) {
        *w = if v { math::exp(l - max) } else { 0.0 };
        sum += *w;
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    true
}

/// Blended image color; `None` when no selected view sees the point, in which
/// case the point is colored by SH alone.
pub fn ibr_color(logits: &[f64], colors: &[[f64; 3]], visible: &[bool], weights: &mut [f64]) -> Option<[f64; 3]> {
    if !softmax_visible(logits, visible, weights) {
        return None;
    }
    let mut c = [0.0; 3];
    for (w, col) in weights.iter().zip(colors) {
        for ch in 0..3 {
            c[ch] += w * col[ch];
        }
    }
    Some(c)
}

/// Reverse pass of [`ibr_color`]: returns `∂L/∂logit` into `dlogits` and
/// `∂L/∂color` into `dcolors`, given `∂L/∂c_ibr`. Invisible entries get 0.
pub fn ibr_color_backward(
    weights: &[f64],
    colors: &[[f64; 3]],
    c_ibr: [f64; 3],
    dc: [f64; 3],
    dlogits: &mut [f64],
    dcolors: &mut [[f64; 3]],
) {
    for i in 0..weights.len() {
        let w = weights[i];
        let c = colors[i];
        dlogits[i] = w * ((c[0] - c_ibr[0]) * dc[0] + (c[1] - c_ibr[1]) * dc[1] + (c[2] - c_ibr[2]) * dc[2]);
        dcolors[i] = [w * dc[0], w * dc[1], w * dc[2]];
    }
}

/// Unclamped sum of the image-based and SH terms.
#[inline]
pub fn point_color(c_ibr: Option<[f64; 3]>, c_sh: [f64; 3]) -> [f64; 3] {
    match c_ibr {
        Some(c) => [c[0] + c_sh[0], c[1] + c_sh[1], c[2] + c_sh[2]],
        None => c_sh,
    }
}
