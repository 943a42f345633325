//! Real orthonormal spherical harmonics through degree 3.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Vec3;

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for bands `0..=degree`.
#[inline]
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at unit direction `d`, written into `out[..num_coeffs(degree)]`.
pub fn basis(degree: usize, d: Vec3, out: &mut [f64]) {
    assert!(degree <= MAX_DEGREE, "SH degree {degree} unsupported");
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Gradients of each basis polynomial with respect to `(x, y, z)`, treating
/// the basis as polynomials on ℝ³.
pub fn basis_grad(degree: usize, d: Vec3, out: &mut [Vec3]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = Vec3::ZERO;
    if degree == 0 {
        return;
    }
    out[1] = Vec3::new(0.0, -C1, 0.0);
    out[2] = Vec3::new(0.0, 0.0, C1);
    out[3] = Vec3::new(-C1, 0.0, 0.0);
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = Vec3::new(y, x, 0.0) * C2[0];
    out[5] = Vec3::new(0.0, z, y) * C2[1];
    out[6] = Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z) * C2[2];
    out[7] = Vec3::new(z, 0.0, x) * C2[3];
    out[8] = Vec3::new(2.0 * x, -2.0 * y, 0.0) * C2[4];
    if degree == 2 {
        return;
    }
    out[9] = Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0) * C3[0];
    out[10] = Vec3::new(y * z, x * z, x * y) * C3[1];
    out[11] = Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z) * C3[2];
    out[12] = Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy) * C3[3];
    out[13] = Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z) * C3[4];
    out[14] = Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * C3[5];
    out[15] = Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0) * C3[6];
}

/// Per-channel SH coefficients, `(degree+1)² × 3`, coefficient-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl ShCoefficients {
    pub fn zeros(degree: usize) -> Self {
        Self { degree, coeffs: vec![0.0; num_coeffs(degree) * 3] }
    }

    pub fn from_slice(degree: usize, coeffs: &[f64]) -> Self {
        assert_eq!(coeffs.len(), num_coeffs(degree) * 3, "SH coefficient block has the wrong size");
        Self { degree, coeffs: coeffs.to_vec() }
    }
}

/// Evaluates `Σ s_k Y_k(d)` per color channel.
pub fn eval_sh(s: &ShCoefficients, d: Vec3) -> [f64; 3] {
    eval_sh_slice(s.degree, &s.coeffs, d)
}

pub fn eval_sh_slice(degree: usize, coeffs: &[f64], d: Vec3) -> [f64; 3] {
    let mut b = [0.0; 16];
    let n = num_coeffs(degree);
    basis(degree, d, &mut b);
    let mut rgb = [0.0; 3];
    for k in 0..n {
        for c in 0..3 {
            rgb[c] += coeffs[k * 3 + c] * b[k];
        }
    }
    rgb
}

/// Reverse pass of [`eval_sh_slice`] for direction `d = v/|v|`.
///
/// Adds `∂/∂coeffs` into `dcoeffs` and returns `∂/∂v` for the unnormalized
/// vector `v` (of length `v_norm`).
pub fn eval_sh_backward(degree: usize, coeffs: &[f64], d: Vec3, v_norm: f64, drgb: [f64; 3], dcoeffs: &mut [f64]) -> Vec3 {
    let mut b = [0.0; 16];
    let mut g = [Vec3::ZERO; 16];
    let n = num_coeffs(degree);
    basis(degree, d, &mut b);
    basis_grad(degree, d, &mut g);
    let mut dd = Vec3::ZERO;
    for k in 0..n {
        let mut dy = 0.0;
        for c in 0..3 {
            dcoeffs[k * 3 + c] += drgb[c] * b[k];
            dy += drgb[c] * coeffs[k * 3 + c];
        }
        dd += g[k] * dy;
    }
    // project out the radial part: d(v/|v|)/dv = (I − d dᵀ)/|v|
    (dd - d * d.dot(dd)) * (1.0 / v_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v * (1.0 / n);
            }
        }
    }

    #[test]
    fn degree_zero_is_constant() {
        let s = ShCoefficients::from_slice(0, &[1.0 / C0, 1.0 / C0, 1.0 / C0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = eval_sh(&s, random_dir(&mut rng));
            for v in c {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        assert!((C0 - 0.2820947918).abs() < 1e-10);
    }

    #[test]
    fn band_one_is_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ShCoefficients::zeros(1);
        for v in &mut s.coeffs[3..] {
            *v = rng.gen_range(-1.0..1.0);
        }
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            let (a, b) = (eval_sh(&s, d), eval_sh(&s, -d));
            for c in 0..3 {
                assert!((a[c] + b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_gradient_is_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for degree in 0..=3 {
            let n = num_coeffs(degree);
            let coeffs: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = random_dir(&mut rng);
            let mut dc = vec![0.0; n * 3];
            eval_sh_backward(degree, &coeffs, d, 1.0, [1.0, 0.0, 0.0], &mut dc);
            let mut b = [0.0; 16];
            basis(degree, d, &mut b);
            for k in 0..n {
                assert!((dc[k * 3] - b[k]).abs() < 1e-12);
                assert_eq!(dc[k * 3 + 1], 0.0);
            }
        }
    }

    #[test]
    fn direction_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let degree = 3;
        let coeffs: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let drgb = [0.3, -0.7, 1.1];
        let f = |v: Vec3| {
            let c = eval_sh_slice(degree, &coeffs, v.normalized());
            c[0] * drgb[0] + c[1] * drgb[1] + c[2] * drgb[2]
        };
        for _ in 0..20 {
            let v = random_dir(&mut rng) * rng.gen_range(0.5..3.0);
            let mut dc = vec![0.0; 48];
            let g = eval_sh_backward(degree, &coeffs, v.normalized(), v.norm(), drgb, &mut dc);
            let eps = 1e-6;
            for a in 0..3 {
                let mut e = [0.0; 3];
                e[a] = eps;
                let e = Vec3::from_array(e);
                let fd = (f(v + e) - f(v - e)) / (2.0 * eps);
                assert!((g[a] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "axis {a}: {} vs {fd}", g[a]);
            }
        }
    }

    #[test]
    fn degree_sizes() {
        assert_eq!(num_coeffs(0) * 3, 3);
        assert_eq!(num_coeffs(2) * 3, 27);
        assert_eq!(num_coeffs(3), 16);
    }
}
