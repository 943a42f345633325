//! Scene bounds, per-frame point clouds and coordinate normalization.

use alloc::vec::Vec;
use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Axis-aligned world bounding box with non-degenerate extent on every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        for axis in 0..3 {
            if !(max[axis] > min[axis]) || !min[axis].is_finite() || !max[axis].is_finite() {
                return Err(Error::DegenerateBbox { axis });
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    /// Per-axis position in `[0, 1]`, clamped.
    #[inline]
    pub fn normalize(&self, p: Vec3) -> [f64; 3] {
        let e = self.extent();
        [
            ((p.x - self.min.x) / e.x).clamp(0.0, 1.0),
            ((p.y - self.min.y) / e.y).clamp(0.0, 1.0),
            ((p.z - self.min.z) / e.z).clamp(0.0, 1.0),
        ]
    }

    /// `∂normalize/∂p` per axis: `1/extent` inside the box, zero where the
    /// clamp is active.
    #[inline]
    pub fn normalize_grad(&self, p: Vec3) -> [f64; 3] {
        let e = self.extent();
        let mut g = [0.0; 3];
        for (a, g) in g.iter_mut().enumerate() {
            if p[a] >= self.min[a] && p[a] <= self.max[a] {
                *g = 1.0 / e[a];
            }
        }
        g
    }
}

/// Maps a world point and normalized time into feature-plane sampling space.
#[inline]
pub fn normalize_coords(bbox: &Aabb, x: Vec3, t: f64) -> [f64; 4] {
    let [a, b, c] = bbox.normalize(x);
    [a, b, c, t.clamp(0.0, 1.0)]
}

/// Learnable point positions of one frame plus the dynamic/static flag of each
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub frame_index: usize,
    pub positions: Vec<Vec3>,
    pub dynamic: Vec<bool>,
}

impl PointCloudFrame {
    pub fn new(frame_index: usize, positions: Vec<Vec3>, dynamic: Vec<bool>) -> Result<Self> {
        let f = Self { frame_index, positions, dynamic };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: alloc::string::String| Error::InvalidFrame { frame: self.frame_index, reason };
        if self.positions.is_empty() {
            return Err(invalid("no points".into()));
        }
        if self.positions.len() != self.dynamic.len() {
            return Err(invalid(format!(
                "{} positions but {} dynamic flags",
                self.positions.len(),
                self.dynamic.len()
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("point {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub bbox: Aabb,
    pub frames: Vec<PointCloudFrame>,
}

impl SceneSequence {
    /// Builds a sequence, clamping every point into `bbox`.
    pub fn new(bbox: Aabb, mut frames: Vec<PointCloudFrame>) -> Result<Self> {
        for (i, f) in frames.iter_mut().enumerate() {
            if f.frame_index != i {
                return Err(Error::InvalidFrame {
                    frame: f.frame_index,
                    reason: format!("expected frame index {i}"),
                });
            }
            f.validate()?;
            for p in &mut f.positions {
                *p = bbox.clamp(*p);
            }
        }
        Ok(Self { bbox, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Normalized time of a frame; strictly increasing from 0 to 1.
    pub fn time_of(&self, frame_index: usize) -> f64 {
        time_of(frame_index, self.frames.len())
    }

    /// Nearest frame for a normalized time.
    pub fn frame_at(&self, t: f64) -> usize {
        frame_at(t, self.frames.len())
    }

    pub fn clamp_to_bbox(&mut self) {
        let bbox = self.bbox;
        for f in &mut self.frames {
            for p in &mut f.positions {
                *p = bbox.clamp(*p);
            }
        }
    }
}

pub fn time_of(frame_index: usize, num_frames: usize) -> f64 {
    if num_frames <= 1 {
        0.0
    } else {
        frame_index as f64 / (num_frames - 1) as f64
    }
}

pub fn frame_at(t: f64, num_frames: usize) -> usize {
    if num_frames <= 1 {
        return 0;
    }
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (num_frames - 1) as f64 + 0.5;
    (x as usize).min(num_frames - 1)
}
