//! Six-plane factorization of a 4D feature field.
//!
//! A point `(x̂, ŷ, ẑ, t̂)` in normalized coordinates is looked up in the
//! planes `xy, xz, yz, tx, ty, tz` by bilinear interpolation; the six
//! results are concatenated in that order, giving a `6·d` feature.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;

pub const NUM_PLANES: usize = 6;

/// Coordinate pairs `(row axis, column axis)` of each plane, indexing into
/// `(x̂, ŷ, ẑ, t̂)`.
pub const PLANE_AXES: [(usize, usize); NUM_PLANES] = [(0, 1), (0, 2), (1, 2), (3, 0), (3, 1), (3, 2)];

pub const PLANE_NAMES: [&str; NUM_PLANES] = ["xy", "xz", "yz", "tx", "ty", "tz"];

/// One `rows × cols` grid of `channels`-dimensional vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeaturePlane {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "feature planes need at least 2x2 nodes");
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    #[inline]
    pub fn node(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.cols + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.cols + col) * self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub spatial_res: usize,
    pub time_res: usize,
    pub channels: usize,
}

impl GridConfig {
    /// Default resolutions for a sequence of `num_frames` frames.
    pub fn for_frames(num_frames: usize) -> Self {
        Self { spatial_res: 64, time_res: num_frames.max(2), channels: 8 }
    }
}

/// Cell index and fractional offset along one plane axis.
///
/// `c ∈ [0,1]` maps to `c·(res−1)`. On a node shared by two cells the lower
/// cell is chosen (offset 1), so sub-gradients are deterministic.
#[inline]
pub fn locate_axis(c: f64, res: usize) -> (usize, f64) {
    let pos = c.clamp(0.0, 1.0) * (res - 1) as f64;
    let i0 = ((math::ceil(pos) as isize) - 1).clamp(0, res as isize - 2) as usize;
    (i0, pos - i0 as f64)
}

/// Where a query landed in each plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLocation {
    /// `(row, col, row fraction, col fraction)` per plane.
    pub cells: [(usize, usize, f64, f64); NUM_PLANES],
    /// Whether each query coordinate was inside `[0, 1]`.
    pub inside: [bool; 4],
}

impl SampleLocation {
    /// The four bilinear weights of a plane, ordered `(r,c), (r,c+1), (r+1,c), (r+1,c+1)`.
    #[inline]
    pub fn weights(&self, plane: usize) -> [f64; 4] {
        let (_, _, fa, fb) = self.cells[plane];
        [(1.0 - fa) * (1.0 - fb), (1.0 - fa) * fb, fa * (1.0 - fb), fa * fb]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlaneSet {
    pub planes: [FeaturePlane; NUM_PLANES],
}

impl FeaturePlaneSet {
    pub fn zeros(cfg: GridConfig) -> Self {
        let s = cfg.spatial_res;
        let t = cfg.time_res;
        let d = cfg.channels;
        Self {
            planes: [
                FeaturePlane::zeros(s, s, d),
                FeaturePlane::zeros(s, s, d),
                FeaturePlane::zeros(s, s, d),
                FeaturePlane::zeros(t, s, d),
                FeaturePlane::zeros(t, s, d),
                FeaturePlane::zeros(t, s, d),
            ],
        }
    }

    /// Entries drawn uniformly from `[−1e-2, 1e-2]`.
    pub fn random<R: Rng + ?Sized>(cfg: GridConfig, rng: &mut R) -> Self {
        let mut s = Self::zeros(cfg);
        for p in &mut s.planes {
            for v in &mut p.data {
                *v = rng.gen_range(-1e-2..=1e-2);
            }
        }
        s
    }

    pub fn zeros_like(&self) -> Self {
        Self { planes: self.planes.clone().map(|p| FeaturePlane { data: vec![0.0; p.data.len()], ..p }) }
    }

    pub fn channels(&self) -> usize {
        self.planes[0].channels
    }

    /// Output feature width, `6·d`.
    pub fn feature_dim(&self) -> usize {
        NUM_PLANES * self.channels()
    }

    pub fn num_params(&self) -> usize {
        self.planes.iter().map(|p| p.data.len()).sum()
    }

    pub fn fill(&mut self, v: f64) {
        for p in &mut self.planes {
            p.data.fill(v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    #[inline]
    pub fn locate(&self, q: [f64; 4]) -> SampleLocation {
        let mut cells = [(0, 0, 0.0, 0.0); NUM_PLANES];
        for (k, &(a, b)) in PLANE_AXES.iter().enumerate() {
            let p = &self.planes[k];
            let (i, fa) = locate_axis(q[a], p.rows);
            let (j, fb) = locate_axis(q[b], p.cols);
            cells[k] = (i, j, fa, fb);
        }
        SampleLocation { cells, inside: q.map(|c| (0.0..=1.0).contains(&c)) }
    }

    /// Bilinear lookup in all six planes, concatenated.
    pub fn sample(&self, q: [f64; 4]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.sample_into(&self.locate(q), &mut out);
        out
    }

    pub fn sample_into(&self, loc: &SampleLocation, out: &mut [f64]) {
        let d = self.channels();
        debug_assert_eq!(out.len(), NUM_PLANES * d);
        for (k, plane) in self.planes.iter().enumerate() {
            let (i, j, _, _) = loc.cells[k];
            let w = loc.weights(k);
            let o = &mut out[k * d..(k + 1) * d];
            let n = [plane.node(i, j), plane.node(i, j + 1), plane.node(i + 1, j), plane.node(i + 1, j + 1)];
            for c in 0..d {
                o[c] = w[0] * n[0][c] + w[1] * n[1][c] + w[2] * n[2][c] + w[3] * n[3][c];
            }
        }
    }

    /// Adds `df` spread over the corner nodes into `grads` (same layout as
    /// `self`) and returns `∂(df·f)/∂q`. Coordinates outside `[0,1]` get zero
    /// gradient.
    pub fn accumulate_backward(&self, loc: &SampleLocation, df: &[f64], grads: &mut FeaturePlaneSet) -> [f64; 4] {
        let d = self.channels();
        let mut dq = [0.0; 4];
        for (k, plane) in self.planes.iter().enumerate() {
            let (i, j, fa, fb) = loc.cells[k];
            let w = loc.weights(k);
            let g = &df[k * d..(k + 1) * d];
            let offs = [plane.offset(i, j), plane.offset(i, j + 1), plane.offset(i + 1, j), plane.offset(i + 1, j + 1)];
            let gp = &mut grads.planes[k].data;
            for (corner, &o) in offs.iter().enumerate() {
                let wc = w[corner];
                if wc != 0.0 {
                    for c in 0..d {
                        gp[o + c] += wc * g[c];
                    }
                }
            }
            // d/dfa and d/dfb of the interpolant, contracted with g
            let mut da = 0.0;
            let mut db = 0.0;
            for c in 0..d {
                let v00 = plane.data[offs[0] + c];
                let v01 = plane.data[offs[1] + c];
                let v10 = plane.data[offs[2] + c];
                let v11 = plane.data[offs[3] + c];
                da += g[c] * ((1.0 - fb) * (v10 - v00) + fb * (v11 - v01));
                db += g[c] * ((1.0 - fa) * (v01 - v00) + fa * (v11 - v10));
            }
            let (a, b) = PLANE_AXES[k];
            dq[a] += da * (plane.rows - 1) as f64;
            dq[b] += db * (plane.cols - 1) as f64;
        }
        for (g, inside) in dq.iter_mut().zip(loc.inside) {
            if !inside {
                *g = 0.0;
            }
        }
        dq
    }

    /// Sparse reverse pass: `(plane, flat data offset, gradient)` entries for
    /// at most four nodes per plane, plus `dq`.
    pub fn sample_backward(&self, q: [f64; 4], df: &[f64]) -> (Vec<(usize, usize, f64)>, [f64; 4]) {
        let loc = self.locate(q);
        let d = self.channels();
        let mut entries = Vec::new();
        for (k, plane) in self.planes.iter().enumerate() {
            let (i, j, _, _) = loc.cells[k];
            let w = loc.weights(k);
            let offs = [plane.offset(i, j), plane.offset(i, j + 1), plane.offset(i + 1, j), plane.offset(i + 1, j + 1)];
            for (corner, &o) in offs.iter().enumerate() {
                if w[corner] != 0.0 {
                    for c in 0..d {
                        entries.push((k, o + c, w[corner] * df[k * d + c]));
                    }
                }
            }
        }
        let mut scratch = self.zeros_like();
        let dq = self.accumulate_backward(&loc, df, &mut scratch);
        (entries, dq)
    }

    /// Flat views of all parameters, plane by plane.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.planes.iter().flat_map(|p| p.data.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.planes.iter_mut().flat_map(|p| p.data.iter_mut())
    }

    /// Mutable access to one scalar by global flat index.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for p in &mut self.planes {
            if index < p.data.len() {
                return &mut p.data[index];
            }
            index -= p.data.len();
        }
        panic!("plane parameter index out of range")
    }

    pub fn param(&self, mut index: usize) -> f64 {
        for p in &self.planes {
            if index < p.data.len() {
                return p.data[index];
            }
            index -= p.data.len();
        }
        panic!("plane parameter index out of range")
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &FeaturePlaneSet) {
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> GridConfig {
        GridConfig { spatial_res: 5, time_res: 3, channels: 2 }
    }

    fn rand_q(rng: &mut ChaCha8Rng) -> [f64; 4] {
        [rng.gen(), rng.gen(), rng.gen(), rng.gen()]
    }

    /// Straightforward bilinear interpolation of a single channel.
    fn scalar_bilinear(p: &FeaturePlane, a: f64, b: f64, c: usize) -> f64 {
        let x = a * (p.rows - 1) as f64;
        let y = b * (p.cols - 1) as f64;
        let i = (x.floor() as usize).min(p.rows - 2);
        let j = (y.floor() as usize).min(p.cols - 2);
        let (s, t) = (x - i as f64, y - j as f64);
        let v = |r: usize, q: usize| p.node(r, q)[c];
        v(i, j) * (1.0 - s) * (1.0 - t) + v(i, j + 1) * (1.0 - s) * t + v(i + 1, j) * s * (1.0 - t) + v(i + 1, j + 1) * s * t
    }

    #[test]
    fn constant_planes_give_constant_feature() {
        let mut s = FeaturePlaneSet::zeros(GridConfig::for_frames(4));
        s.fill(0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let f = s.sample(rand_q(&mut rng));
            assert_eq!(f.len(), 48);
            assert!(f.iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn grid_node_query_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = FeaturePlaneSet::random(small_cfg(), &mut rng);
        // x̂ = 1/4 → node 1 of a 5-res axis, t̂ = 1/2 → node 1 of a 3-res axis
        let q = [0.25, 0.5, 1.0, 0.5];
        let f = s.sample(q);
        let nodes = [(1, 2), (1, 4), (2, 4), (1, 1), (1, 2), (1, 4)];
        for (k, &(r, c)) in nodes.iter().enumerate() {
            assert_eq!(&f[k * 2..k * 2 + 2], s.planes[k].node(r, c));
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GridConfig { spatial_res: 7, time_res: 4, channels: 3 };
        for _ in 0..50 {
            let s = FeaturePlaneSet::random(cfg, &mut rng);
            let q = rand_q(&mut rng);
            let f = s.sample(q);
            for (k, &(a, b)) in PLANE_AXES.iter().enumerate() {
                for c in 0..3 {
                    let want = scalar_bilinear(&s.planes[k], q[a], q[b], c);
                    assert!((f[k * 3 + c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn node_query_backward_hits_single_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = FeaturePlaneSet::random(small_cfg(), &mut rng);
        let df: Vec<f64> = (0..12).map(|i| i as f64 + 1.0).collect();
        let (entries, _) = s.sample_backward([0.5, 0.25, 0.75, 0.0], &df);
        // one node per plane, 2 channels
        assert_eq!(entries.len(), 12);
        for &(k, _, g) in &entries {
            assert!(df[k * 2..k * 2 + 2].contains(&g));
        }
    }

    #[test]
    fn constant_planes_have_zero_dq() {
        let mut s = FeaturePlaneSet::zeros(small_cfg());
        s.fill(-2.0);
        let (_, dq) = s.sample_backward([0.3, 0.6, 0.1, 0.9], &[1.0; 12]);
        assert_eq!(dq, [0.0; 4]);
    }

    #[test]
    fn lower_cell_tie_break() {
        assert_eq!(locate_axis(0.5, 5), (1, 1.0));
        assert_eq!(locate_axis(0.0, 5), (0, 0.0));
        assert_eq!(locate_axis(1.0, 5), (3, 1.0));
        assert_eq!(locate_axis(0.6, 5).0, 2);
    }

    #[test]
    fn weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = FeaturePlaneSet::random(GridConfig::for_frames(10), &mut rng);
        for _ in 0..200 {
            let loc = s.locate(rand_q(&mut rng));
            for k in 0..NUM_PLANES {
                let w = loc.weights(k);
                assert!(w.iter().all(|&x| x >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_in_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_cfg();
        for _ in 0..50 {
            let a = FeaturePlaneSet::random(cfg, &mut rng);
            let b = FeaturePlaneSet::random(cfg, &mut rng);
            let (alpha, beta) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let mut mix = a.zeros_like();
            mix.axpy(alpha, &a);
            mix.axpy(beta, &b);
            let q = rand_q(&mut rng);
            let (fa, fb, fm) = (a.sample(q), b.sample(q), mix.sample(q));
            for i in 0..fm.len() {
                assert!((fm[i] - (alpha * fa[i] + beta * fb[i])).abs() < 1e-12);
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GridConfig { spatial_res: 6, time_res: 4, channels: 2 };
        let eps = 1e-4;
        let mut checked = 0;
        while checked < 100 {
            let mut s = FeaturePlaneSet::random(cfg, &mut rng);
            for v in s.params_mut() {
                *v *= 100.0;
            }
            let q = [rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)];
            // the interpolant is only C0 across cells; skip queries whose
            // stencil straddles a cell boundary
            let loc = s.locate(q);
            let same_cell = (0..4).all(|a| {
                let mut lo = q;
                let mut hi = q;
                lo[a] -= eps;
                hi[a] += eps;
                s.locate(lo).cells.iter().zip(s.locate(hi).cells.iter()).zip(loc.cells.iter()).all(|((x, y), z)| {
                    (x.0, x.1) == (z.0, z.1) && (y.0, y.1) == (z.0, z.1)
                })
            });
            if !same_cell {
                continue;
            }
            checked += 1;
            let df: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |s: &FeaturePlaneSet, q: [f64; 4]| -> f64 {
                s.sample(q).iter().zip(&df).map(|(a, b)| a * b).sum()
            };
            let (entries, dq) = s.sample_backward(q, &df);
            for a in 0..4 {
                let mut hi = q;
                let mut lo = q;
                hi[a] += eps;
                lo[a] -= eps;
                let fd = (objective(&s, hi) - objective(&s, lo)) / (2.0 * eps);
                assert!(rel_err(dq[a], fd) < 1e-5, "dq[{a}] {} vs {fd}", dq[a]);
            }
            let mut dense = vec![0.0; s.num_params()];
            for &(k, o, g) in &entries {
                let base: usize = s.planes[..k].iter().map(|p| p.data.len()).sum();
                dense[base + o] += g;
            }
            for _ in 0..5 {
                let idx = rng.gen_range(0..s.num_params());
                let mut sp = s.clone();
                *sp.param_mut(idx) += eps;
                let mut sm = s.clone();
                *sm.param_mut(idx) -= eps;
                let fd = (objective(&sp, q) - objective(&sm, q)) / (2.0 * eps);
                assert!((dense[idx] - fd).abs() < 1e-5 * fd.abs().max(1e-3));
            }
        }
    }
}
