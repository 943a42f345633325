//! Pinhole cameras: +z forward, image origin top-left, pixel centers at
//! integer coordinates.

use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};

/// Clamp range for projected splat radii, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusLimits {
    pub min_px: f64,
    pub max_px: f64,
}

impl Default for RadiusLimits {
    fn default() -> Self {
        Self { min_px: 0.5, max_px: 64.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Result of projecting one world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Point in camera coordinates.
    pub cam: Vec3,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, rotation, translation, width, height, near, far };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidCamera(m));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("clip range must satisfy 0 < near < far, got [{}, {}]", self.near, self.far));
        }
        let err = self.rotation.orthonormality_error();
        if !(err < 1e-6) || self.rotation.determinant() <= 0.0 {
            return bad(format!("rotation is not a proper rotation (orthonormality error {err:e})"));
        }
        if !self.translation.is_finite() {
            return bad("translation is not finite".into());
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalized();
        // image y grows downward, so the camera "down" axis is -up projected
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -rotation.mul_vec(eye);
        Camera::new(
            focal,
            focal,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            rotation,
            translation,
            width,
            height,
            near,
            far,
        )
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -self.rotation.tmul_vec(self.translation)
    }

    /// Same pose with intrinsics rescaled to a new resolution.
    pub fn with_resolution(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            ..self.clone()
        }
    }

    #[inline]
    pub fn to_camera(&self, x: Vec3) -> Vec3 {
        self.rotation.mul_vec(x) + self.translation
    }

    /// Pinhole projection. Never fails; use [`Projection::visible`] for the
    /// frustum test.
    #[inline]
    pub fn project(&self, x: Vec3) -> Projection {
        let cam = self.to_camera(x);
        let inv_z = 1.0 / cam.z;
        Projection {
            u: self.fx * cam.x * inv_z + self.cx,
            v: self.fy * cam.y * inv_z + self.cy,
            depth: cam.z,
            cam,
        }
    }

    /// World point at pixel `(u, v)` and camera depth `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let cam = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.tmul_vec(cam - self.translation)
    }

    /// Rows are the gradients of `u`, `v` and `depth` with respect to the
    /// world point.
    pub fn project_jacobian(&self, p: &Projection) -> [Vec3; 3] {
        let c = p.cam;
        let inv_z = 1.0 / c.z;
        let du_dc = Vec3::new(self.fx * inv_z, 0.0, -self.fx * c.x * inv_z * inv_z);
        let dv_dc = Vec3::new(0.0, self.fy * inv_z, -self.fy * c.y * inv_z * inv_z);
        [
            self.rotation.tmul_vec(du_dc),
            self.rotation.tmul_vec(dv_dc),
            self.rotation.row(2),
        ]
    }

    /// Splat radius in pixels for a world-space radius at `depth`, clamped to
    /// `limits`.
    #[inline]
    pub fn projected_radius(&self, depth: f64, r_world: f64, limits: RadiusLimits) -> f64 {
        (r_world * self.fy / depth).clamp(limits.min_px, limits.max_px)
    }

    /// Partial derivatives `(∂r_px/∂r_world, ∂r_px/∂depth)`, or `None` where
    /// the clamp is active.
    #[inline]
    pub fn projected_radius_grad(&self, depth: f64, r_world: f64, limits: RadiusLimits) -> Option<(f64, f64)> {
        let raw = r_world * self.fy / depth;
        if raw < limits.min_px || raw > limits.max_px {
            None
        } else {
            Some((self.fy / depth, -raw / depth))
        }
    }

    #[inline]
    pub fn depth_in_range(&self, depth: f64) -> bool {
        depth >= self.near && depth <= self.far
    }

    /// True when the depth is inside the clip range and the pixel lies inside
    /// the image rectangle grown by `margin_px`.
    #[inline]
    pub fn is_visible(&self, p: &Projection, margin_px: f64) -> bool {
        self.depth_in_range(p.depth)
            && p.u >= -0.5 - margin_px
            && p.u <= self.width as f64 - 0.5 + margin_px
            && p.v >= -0.5 - margin_px
            && p.v <= self.height as f64 - 0.5 + margin_px
    }

    /// Unit direction from the camera center toward `x`.
    #[inline]
    pub fn view_dir(&self, x: Vec3) -> Vec3 {
        (x - self.center()).normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cam() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, Mat3::IDENTITY, Vec3::ZERO, 100, 100, 0.1, 100.0).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        Mat3::rotation(axis, rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn on_axis_point() {
        let p = identity_cam().project(Vec3::new(0.0, 0.0, 2.0));
        assert_eq!((p.u, p.v, p.depth), (50.0, 50.0, 2.0));
    }

    #[test]
    fn off_axis_point() {
        let p = identity_cam().project(Vec3::new(1.0, 0.0, 2.0));
        assert_eq!((p.u, p.v, p.depth), (100.0, 50.0, 2.0));
    }

    /// Homogeneous 4×4 pipeline: K·[R|t] as separate matrices.
    fn matrix_oracle(cam: &Camera, x: Vec3) -> (f64, f64, f64) {
        let r = &cam.rotation.0;
        let t = cam.translation;
        let extrinsic = [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let intrinsic = [
            [cam.fx, 0.0, cam.cx, 0.0],
            [0.0, cam.fy, cam.cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let h = [x.x, x.y, x.z, 1.0];
        let mut e = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                e[i] += extrinsic[i][j] * h[j];
            }
        }
        let mut k = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                k[i] += intrinsic[i][j] * e[j];
            }
        }
        (k[0] / k[2], k[1] / k[2], e[2])
    }

    #[test]
    fn matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let cam = Camera::new(
                rng.gen_range(50.0..500.0),
                rng.gen_range(50.0..500.0),
                rng.gen_range(0.0..200.0),
                rng.gen_range(0.0..100.0),
                random_rotation(&mut rng),
                Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                200,
                100,
                0.01,
                1e3,
            )
            .unwrap();
            let x = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let p = cam.project(x);
            if p.depth.abs() < 1e-2 {
                continue;
            }
            let (u, v, d) = matrix_oracle(&cam, x);
            let tol = 1e-9 * (1.0 + u.abs().max(v.abs()));
            assert!((p.u - u).abs() < tol && (p.v - v).abs() < tol && (p.depth - d).abs() < 1e-9);
        }
    }

    #[test]
    fn back_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let cam = Camera::new(
                120.0,
                110.0,
                63.5,
                40.0,
                random_rotation(&mut rng),
                Vec3::new(rng.gen_range(-1.0..1.0), 0.3, 2.0),
                128,
                96,
                0.05,
                50.0,
            )
            .unwrap();
            let (u, v, d) = (rng.gen_range(0.0..128.0), rng.gen_range(0.0..96.0), rng.gen_range(0.05..50.0));
            let p = cam.project(cam.back_project(u, v, d));
            assert!((p.u - u).abs() <= 1e-6 * u.abs().max(1.0));
            assert!((p.v - v).abs() <= 1e-6 * v.abs().max(1.0));
            assert!((p.depth - d).abs() <= 1e-6 * d);
        }
    }

    #[test]
    fn rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let cam = Camera::new(
                90.0,
                90.0,
                32.0,
                32.0,
                random_rotation(&mut rng),
                Vec3::new(0.1, -0.2, 3.0),
                64,
                64,
                0.1,
                10.0,
            )
            .unwrap();
            let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // world moves by (Q, s): x' = Qx + s; camera pose compensates
            let q = random_rotation(&mut rng);
            let s = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let moved = Camera {
                rotation: cam.rotation.mul_mat(&q.transpose()),
                translation: cam.translation - cam.rotation.mul_vec(q.transpose().mul_vec(s)),
                ..cam.clone()
            };
            let a = cam.project(x);
            let b = moved.project(q.mul_vec(x) + s);
            assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9 && (a.depth - b.depth).abs() < 1e-9);
        }
    }

    #[test]
    fn projected_radius_cases() {
        let cam = identity_cam();
        let lim = RadiusLimits::default();
        assert!((cam.projected_radius(2.0, 0.04, lim) - 2.0).abs() < 1e-12);
        let near = cam.projected_radius(2.0, 0.1, lim);
        let far = cam.projected_radius(4.0, 0.1, lim);
        assert!((near - 2.0 * far).abs() < 1e-12);
        assert_eq!(cam.projected_radius(2.0, 1e-9, lim), 0.5);
        assert!(cam.projected_radius_grad(2.0, 1e-9, lim).is_none());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cam = Camera::new(
            80.0,
            95.0,
            30.0,
            31.0,
            random_rotation(&mut rng),
            Vec3::new(0.2, 0.1, 4.0),
            64,
            64,
            0.1,
            20.0,
        )
        .unwrap();
        let x = Vec3::new(0.3, -0.2, 0.1);
        let jac = cam.project_jacobian(&cam.project(x));
        let eps = 1e-6;
        for axis in 0..3 {
            let mut d = [0.0; 3];
            d[axis] = eps;
            let dv = Vec3::from_array(d);
            let (a, b) = (cam.project(x + dv), cam.project(x - dv));
            let fd = [(a.u - b.u) / (2.0 * eps), (a.v - b.v) / (2.0 * eps), (a.depth - b.depth) / (2.0 * eps)];
            for r in 0..3 {
                assert!((jac[r][axis] - fd[r]).abs() < 1e-5 * (1.0 + fd[r].abs()));
            }
        }
    }

    #[test]
    fn rejects_invalid() {
        let ok = identity_cam();
        assert!(Camera { fx: -1.0, ..ok.clone() }.validate().is_err());
        assert!(Camera { near: 5.0, far: 1.0, ..ok.clone() }.validate().is_err());
        assert!(Camera { cx: 100.0, ..ok.clone() }.validate().is_err());
        let mut bad = ok.clone();
        bad.rotation.0[0][0] = 2.0;
        assert!(bad.validate().is_err());
    }
}
