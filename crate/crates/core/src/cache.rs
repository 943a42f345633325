//! Precomputed per-frame attributes and the network-free render path.
//!
//! Dump layout (little-endian):
//!
//! ```text
//! "4KCH" u32 version u32 N u32 V u32 L u32 precision
//! u32 frame_index u32 num_sources
//! f64×3 anchor  f64×3 background  f64 r_px_min  f64 r_px_max
//! f64×3V source centers
//! positions N×3 · radii N · densities N · sh N×3(L+1)² · logits N×V · colors N×V×3
//! visibility ⌈N·V/8⌉ bytes, bit i of byte j is pair 8j+i
//! ```
//!
//! Arrays are f32 or f16 per the precision tag; tag 2 keeps positions in
//! f32 and everything else in f16.

use alloc::vec;
use alloc::vec::Vec;

use half::f16;

use crate::appearance::{self, ibr_color, point_color, LOGIT_SENTINEL_F16, LOGIT_SENTINEL_F32};
use crate::camera::{Camera, RadiusLimits};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::model::{make_splat, SceneModel, SourceViews};
use crate::par;
use crate::render::{self, Composite, PeelBuffer, RasterConfig, Rasterizer, Splat};
use crate::sh;

pub const CACHE_MAGIC: [u8; 4] = *b"4KCH";
pub const CACHE_VERSION: u32 = 1;
pub const MAX_BLENDED_VIEWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F16,
    /// Half precision except for positions.
    F16KeepPositions,
}

impl Precision {
    pub fn tag(self) -> u32 {
        match self {
            Precision::F32 => 0,
            Precision::F16 => 1,
            Precision::F16KeepPositions => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Precision::F32),
            1 => Some(Precision::F16),
            2 => Some(Precision::F16KeepPositions),
            _ => None,
        }
    }

    fn position_bytes(self) -> usize {
        match self {
            Precision::F16 => 2,
            _ => 4,
        }
    }

    fn value_bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            _ => 2,
        }
    }
}

/// A float array in one of the two storage precisions.
#[derive(Debug, Clone, PartialEq)]
pub enum Store {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl Store {
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Store::F32(v) => v[i] as f64,
            Store::F16(v) => v[i].to_f64(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Store::F32(v) => v.len(),
            Store::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Round-to-nearest-even conversion to f16; out-of-range values clamp to
    /// ±65504 and are counted in `clamped`. `sentinel` values map to the f16
    /// sentinel without counting.
    fn to_f16(&self, sentinel: Option<f32>, clamped: &mut usize) -> Store {
        match self {
            Store::F16(v) => Store::F16(v.clone()),
            Store::F32(v) => Store::F16(
                v.iter()
                    .map(|&x| {
                        if Some(x) == sentinel {
                            return LOGIT_SENTINEL_F16;
                        }
                        let h = f16::from_f32(x);
                        if h.is_infinite() {
                            *clamped += 1;
                            if x > 0.0 {
                                f16::MAX
                            } else {
                                f16::MIN
                            }
                        } else {
                            h
                        }
                    })
                    .collect(),
            ),
        }
    }
}

/// Render-ready attributes of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCache {
    pub frame_index: usize,
    pub num_points: usize,
    pub num_views: usize,
    pub sh_degree: usize,
    pub precision: Precision,
    pub num_sources: usize,
    /// View-selection anchor (scene box center).
    pub anchor: Vec3,
    pub source_centers: Vec<Vec3>,
    pub background: [f64; 3],
    pub radius_limits: RadiusLimits,
    pub positions: Store,
    pub radii: Store,
    pub densities: Store,
    pub sh: Store,
    pub logits: Store,
    pub colors: Store,
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuantizeReport {
    /// Values outside the half-precision range that were clamped.
    pub clamped: usize,
}

fn f32s(v: impl Iterator<Item = f64>) -> Store {
    Store::F32(v.map(|x| x as f32).collect())
}

/// Evaluates every head for every point of `frame` once, plus logits and
/// color samples for every (point, source view) pair.
pub fn precompute(model: &SceneModel, frame: usize, sources: &SourceViews) -> FrameCache {
    let attrs = model.point_attributes(frame);
    let all: Vec<usize> = (0..sources.cameras.len()).collect();
    let samples = model.sample_sources(&attrs, sources, &all);
    let pts = &model.scene.frames[frame].positions;
    FrameCache {
        frame_index: frame,
        num_points: pts.len(),
        num_views: all.len(),
        sh_degree: model.heads.sh_degree,
        precision: Precision::F32,
        num_sources: model.config.num_sources,
        anchor: model.scene.bbox.center(),
        source_centers: sources.cameras.iter().map(Camera::center).collect(),
        background: model.config.background,
        radius_limits: model.config.radius_limits,
        positions: f32s(pts.iter().flat_map(|p| p.to_array())),
        radii: f32s(attrs.radius.iter().copied()),
        densities: f32s(attrs.density.iter().copied()),
        sh: f32s(attrs.sh.iter().copied()),
        logits: Store::F32(
            samples.logits.iter().zip(&samples.visible).map(|(&l, &v)| if v { l as f32 } else { LOGIT_SENTINEL_F32 }).collect(),
        ),
        colors: f32s(samples.colors.iter().flat_map(|c| c.iter().copied())),
        visible: samples.visible,
    }
}

pub fn quantize_fp16(cache: &FrameCache, keep_positions_f32: bool) -> (FrameCache, QuantizeReport) {
    let mut clamped = 0;
    let positions = if keep_positions_f32 { cache.positions.clone() } else { cache.positions.to_f16(None, &mut clamped) };
    let out = FrameCache {
        precision: if keep_positions_f32 { Precision::F16KeepPositions } else { Precision::F16 },
        positions,
        radii: cache.radii.to_f16(None, &mut clamped),
        densities: cache.densities.to_f16(None, &mut clamped),
        sh: cache.sh.to_f16(None, &mut clamped),
        logits: cache.logits.to_f16(Some(LOGIT_SENTINEL_F32), &mut clamped),
        colors: cache.colors.to_f16(None, &mut clamped),
        source_centers: cache.source_centers.clone(),
        visible: cache.visible.clone(),
        ..*cache
    };
    (out, QuantizeReport { clamped })
}

impl FrameCache {
    /// An empty cache that renders as background.
    pub fn empty(frame_index: usize, background: [f64; 3]) -> Self {
        Self {
            frame_index,
            num_points: 0,
            num_views: 0,
            sh_degree: 0,
            precision: Precision::F32,
            num_sources: appearance::DEFAULT_NUM_SOURCES,
            anchor: Vec3::ZERO,
            source_centers: Vec::new(),
            background,
            radius_limits: RadiusLimits::default(),
            positions: Store::F32(Vec::new()),
            radii: Store::F32(Vec::new()),
            densities: Store::F32(Vec::new()),
            sh: Store::F32(Vec::new()),
            logits: Store::F32(Vec::new()),
            colors: Store::F32(Vec::new()),
            visible: Vec::new(),
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::new(self.positions.get(3 * i), self.positions.get(3 * i + 1), self.positions.get(3 * i + 2))
    }

    /// Dequantized radius, kept strictly positive.
    #[inline]
    pub fn radius(&self, i: usize) -> f64 {
        self.radii.get(i).max(f64::MIN_POSITIVE)
    }

    /// Dequantized density, kept inside `(0, 1)`.
    #[inline]
    pub fn density(&self, i: usize) -> f64 {
        self.densities.get(i).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    #[inline]
    pub fn logit(&self, i: usize, view: usize) -> f64 {
        self.logits.get(i * self.num_views + view)
    }

    #[inline]
    pub fn color(&self, i: usize, view: usize) -> [f64; 3] {
        let o = (i * self.num_views + view) * 3;
        [self.colors.get(o), self.colors.get(o + 1), self.colors.get(o + 2)]
    }

    /// Bytes of the fixed part of the dump.
    pub fn header_bytes(num_views: usize) -> usize {
        4 + 5 * 4 + 2 * 4 + 8 * 8 + 24 * num_views
    }

    /// Bytes of the array section: `N·(3·p + (2 + 3(L+1)²)·b + V·4·b) +
    /// ⌈N·V/8⌉` with `p` the position and `b` the value width.
    pub fn payload_bytes(n: usize, v: usize, degree: usize, precision: Precision) -> usize {
        let b = precision.value_bytes();
        let p = precision.position_bytes();
        n * (3 * p + (2 + 3 * sh::num_coeffs(degree)) * b + v * 4 * b) + (n * v).div_ceil(8)
    }

    pub fn size_bytes(&self) -> usize {
        Self::header_bytes(self.num_views) + Self::payload_bytes(self.num_points, self.num_views, self.sh_degree, self.precision)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(&CACHE_MAGIC);
        for v in [CACHE_VERSION, self.num_points as u32, self.num_views as u32, self.sh_degree as u32, self.precision.tag()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.frame_index as u32, self.num_sources as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let f64s = self.anchor.to_array().into_iter().chain(self.background).chain([self.radius_limits.min_px, self.radius_limits.max_px]);
        for v in f64s.chain(self.source_centers.iter().flat_map(|c| c.to_array())) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in [&self.positions, &self.radii, &self.densities, &self.sh, &self.logits, &self.colors] {
            match s {
                Store::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Store::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let mut bits = vec![0u8; self.visible.len().div_ceil(8)];
        for (i, &v) in self.visible.iter().enumerate() {
            bits[i / 8] |= (v as u8) << (i % 8);
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Format("not a frame cache (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(alloc::format!("unsupported frame cache version {version}")));
        }
        let n = r.u32()? as usize;
        let v = r.u32()? as usize;
        let degree = r.u32()? as usize;
        if degree > sh::MAX_DEGREE {
            return Err(Error::Format(alloc::format!("SH degree {degree} out of range")));
        }
        let precision = Precision::from_tag(r.u32()?).ok_or_else(|| Error::Format("unknown precision tag".into()))?;
        let frame_index = r.u32()? as usize;
        let num_sources = r.u32()? as usize;
        let anchor = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let background = [r.f64()?, r.f64()?, r.f64()?];
        let radius_limits = RadiusLimits { min_px: r.f64()?, max_px: r.f64()? };
        let mut source_centers = Vec::with_capacity(v.min(1 << 16));
        for _ in 0..v {
            source_centers.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
        }
        let pos_half = precision == Precision::F16;
        let half = precision != Precision::F32;
        let positions = r.store(n * 3, pos_half)?;
        let radii = r.store(n, half)?;
        let densities = r.store(n, half)?;
        let sh = r.store(n * 3 * sh::num_coeffs(degree), half)?;
        let logits = r.store(n * v, half)?;
        let colors = r.store(n * v * 3, half)?;
        let bits = r.take((n * v).div_ceil(8))?;
        let visible = (0..n * v).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after frame cache".into()));
        }
        Ok(Self {
            frame_index,
            num_points: n,
            num_views: v,
            sh_degree: degree,
            precision,
            num_sources,
            anchor,
            source_centers,
            background,
            radius_limits,
            positions,
            radii,
            densities,
            sh,
            logits,
            colors,
            visible,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn store(&mut self, n: usize, half: bool) -> Result<Store> {
        if half {
            let b = self.take(n.checked_mul(2).ok_or(Error::Truncated)?)?;
            Ok(Store::F16(b.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]])).collect()))
        } else {
            let b = self.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
            Ok(Store::F32(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
        }
    }
}

/// Scratch state for [`FrameCache`] rendering; buffers are reused so a
/// warmed-up renderer does not allocate.
#[derive(Debug, Clone, Default)]
pub struct CachedRenderer {
    rasterizer: Rasterizer,
    peel: PeelBuffer,
    image: Composite,
    splats: Vec<Splat>,
    colors: Vec<[f64; 3]>,
    selected: Vec<usize>,
    ranked: Vec<(f64, usize)>,
}

impl CachedRenderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capacity_bytes(&self) -> usize {
        self.rasterizer.capacity_bytes()
            + self.peel.capacity_bytes()
            + self.image.capacity_bytes()
            + self.splats.capacity() * core::mem::size_of::<Splat>()
            + self.colors.capacity() * 24
            + self.selected.capacity() * 8
            + self.ranked.capacity() * 16
    }

    pub fn image(&self) -> &Composite {
        &self.image
    }

    /// Renders `cache` from `camera` with `k` peeling passes.
    pub fn render(&mut self, cache: &FrameCache, camera: &Camera, k: usize) -> &Composite {
        let n = cache.num_points;
        let center = camera.center();
        self.ranked.clear();
        self.ranked.extend(cache.source_centers.iter().enumerate().map(|(i, &c)| (appearance::view_angle(cache.anchor, c, center), i)));
        self.ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.ranked.truncate(cache.num_sources.max(1));
        self.selected.clear();
        self.selected.extend(self.ranked.iter().map(|r| r.1));
        assert!(self.selected.len() <= MAX_BLENDED_VIEWS, "at most {MAX_BLENDED_VIEWS} blended views are supported");

        let nc = sh::num_coeffs(cache.sh_degree) * 3;
        let selected = &self.selected;
        self.splats.resize(n, Splat::default());
        self.colors.resize(n, [0.0; 3]);
        let limits = cache.radius_limits;
        par::for_each_chunk_mut(&mut self.splats, 1024, |chunk, splats| {
            for (j, s) in splats.iter_mut().enumerate() {
                let i = chunk * 1024 + j;
                *s = make_splat(camera, cache.position(i), cache.radius(i), cache.density(i), limits).0;
            }
        });
        let splats = &self.splats;
        par::for_each_chunk_mut(&mut self.colors, 1024, |chunk, colors| {
            let mut coeffs = [0.0; 3 * sh::num_coeffs(sh::MAX_DEGREE)];
            let mut logits = [0.0; MAX_BLENDED_VIEWS];
            let mut cols = [[0.0; 3]; MAX_BLENDED_VIEWS];
            let mut vis = [false; MAX_BLENDED_VIEWS];
            let mut w = [0.0; MAX_BLENDED_VIEWS];
            let s = selected.len();
            for (j, c) in colors.iter_mut().enumerate() {
                let i = chunk * 1024 + j;
                if !splats[i].visible {
                    continue;
                }
                for (q, v) in coeffs[..nc].iter_mut().enumerate() {
                    *v = cache.sh.get(i * nc + q);
                }
                let x = cache.position(i);
                let c_sh = sh::eval_sh_slice(cache.sh_degree, &coeffs[..nc], (x - center).normalized());
                for (slot, &v) in selected.iter().take(s).enumerate() {
                    vis[slot] = cache.visible[i * cache.num_views + v];
                    logits[slot] = cache.logit(i, v);
                    cols[slot] = cache.color(i, v);
                }
                let ibr = ibr_color(&logits[..s], &cols[..s], &vis[..s], &mut w[..s]);
                *c = point_color(ibr, c_sh);
            }
        });
        self.rasterizer.depth_peel(&self.splats, camera.width as usize, camera.height as usize, RasterConfig { k, ..RasterConfig::default() }, &mut self.peel);
        render::composite_into(&self.peel, &self.colors, cache.background, &mut self.image);
        &self.image
    }
}

/// One-shot cached render.
pub fn render_cached(cache: &FrameCache, camera: &Camera, k: usize) -> Composite {
    let mut r = CachedRenderer::new();
    r.render(cache, camera, k);
    r.image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;
    use crate::image::Image;
    use crate::model::ModelConfig;
    use crate::nn::{EncodedImage, HeadConfig};
    use crate::scene::{Aabb, PointCloudFrame, SceneSequence};
    use crate::math;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        model: SceneModel,
        cameras: Vec<Camera>,
        images: Vec<EncodedImage>,
    }

    fn setup(n: usize, seed: u64) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bbox = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6))).collect();
        let scene = SceneSequence::new(bbox, vec![PointCloudFrame::new(0, pts, vec![true; n]).unwrap()]).unwrap();
        let mut cfg = ModelConfig::for_frames(1);
        cfg.grid = GridConfig { spatial_res: 8, time_res: 2, channels: 4 };
        cfg.heads = HeadConfig { hidden_width: 16, ..HeadConfig::default() };
        cfg.background = [0.2, 0.3, 0.4];
        let mut model = SceneModel::new(scene, cfg, &mut rng);
        model.heads.set_initial_radius(0.05);
        let up = Vec3::new(0.0, 1.0, 0.0);
        let cameras: Vec<Camera> = (0..6)
            .map(|i| {
                let a = i as f64;
                Camera::look_at(Vec3::new(3.0 * math::cos(a), 0.5, 3.0 * math::sin(a)), Vec3::ZERO, up, 40.0, 32, 32, 0.1, 10.0).unwrap()
            })
            .collect();
        let images = (0..6)
            .map(|v| model.encode(&Image::from_fn(32, 32, |x, y| [x as f64 / 31.0, y as f64 / 31.0, v as f64 / 6.0])))
            .collect();
        Setup { model, cameras, images }
    }

    fn target() -> Camera {
        Camera::look_at(Vec3::new(2.0, 1.0, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, 32, 32, 0.1, 10.0).unwrap()
    }

    #[test]
    fn cached_render_matches_training_path() {
        let s = setup(300, 1);
        let src = SourceViews { cameras: &s.cameras, images: &s.images };
        let cache = precompute(&s.model, 0, &src);
        let cam = target();
        let k = s.model.config.k;
        let a = render_cached(&cache, &cam, k);
        let b = s.model.forward(0, &cam, &src);
        let max = a.color.iter().zip(&b.image.color).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max <= 1e-6, "max pixel difference {max}");
    }

    #[test]
    fn precompute_is_deterministic_and_sized_by_formula() {
        let s = setup(120, 2);
        let src = SourceViews { cameras: &s.cameras, images: &s.images };
        let a = precompute(&s.model, 0, &src);
        let b = precompute(&s.model, 0, &src);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let nc = 3 * 9;
        let expected = (4 + 20 + 8 + 64 + 24 * 6) + 120 * (3 * 4 + 4 + 4 + nc * 4) + 120 * 6 * (4 + 12) + (120 * 6usize).div_ceil(8);
        assert_eq!(a.size_bytes(), expected);
        assert_eq!(a.to_bytes().len(), expected);
        let (h, _) = quantize_fp16(&a, false);
        assert_eq!(h.to_bytes().len(), h.size_bytes());
        assert_eq!(h.size_bytes(), (4 + 20 + 8 + 64 + 24 * 6) + 120 * (3 * 2 + 2 + 2 + nc * 2) + 120 * 6 * (2 + 6) + 90);
    }

    #[test]
    fn dump_round_trips_and_detects_damage() {
        let s = setup(50, 3);
        let src = SourceViews { cameras: &s.cameras, images: &s.images };
        let a = precompute(&s.model, 0, &src);
        for c in [a.clone(), quantize_fp16(&a, false).0, quantize_fp16(&a, true).0] {
            let bytes = c.to_bytes();
            assert_eq!(FrameCache::from_bytes(&bytes).unwrap(), c);
            assert_eq!(FrameCache::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated));
            let mut bad = bytes.clone();
            bad[0] = b'X';
            assert!(matches!(FrameCache::from_bytes(&bad), Err(Error::Format(_))));
        }
    }

    #[test]
    fn half_precision_round_trip_bounds() {
        let mut c = FrameCache::empty(0, [0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut vals: Vec<f32> = vec![0.0, 0.5, 1.0, -2.0];
        vals.extend((0..1000).map(|_| rng.gen_range(-100.0f32..100.0)));
        vals.push(1e6);
        vals.push(-7e4);
        c.sh = Store::F32(vals.clone());
        let (h, report) = quantize_fp16(&c, false);
        assert_eq!(report.clamped, 2);
        for (i, &x) in vals.iter().enumerate() {
            let y = h.sh.get(i);
            if i < 4 {
                assert_eq!(y, x as f64);
            } else if x.abs() < 65504.0 && x.abs() > 6.2e-5 {
                assert!((y - x as f64).abs() <= x.abs() as f64 / 2048.0, "{x} -> {y}");
            }
        }
        assert_eq!(h.sh.get(vals.len() - 2), 65504.0);
        assert_eq!(h.sh.get(vals.len() - 1), -65504.0);
    }

    #[test]
    fn quantization_keeps_attributes_valid_and_sentinels() {
        let s = setup(200, 5);
        let src = SourceViews { cameras: &s.cameras, images: &s.images };
        let mut a = precompute(&s.model, 0, &src);
        // densities next to 1 round up in half precision
        a.densities = Store::F32((0..200).map(|i| if i % 2 == 0 { 0.99999 } else { 1e-9 }).collect());
        if let Store::F32(l) = &mut a.logits {
            for j in (0..a.visible.len()).step_by(7) {
                a.visible[j] = false;
                l[j] = LOGIT_SENTINEL_F32;
            }
        }
        let (h, _) = quantize_fp16(&a, false);
        for i in 0..200 {
            let d = h.density(i);
            assert!(d > 0.0 && d < 1.0);
            assert!(h.radius(i) > 0.0);
            for v in 0..h.num_views {
                if !h.visible[i * h.num_views + v] {
                    assert_eq!(h.logit(i, v), -65504.0);
                }
            }
        }
    }

    #[test]
    fn empty_cache_renders_background() {
        let c = FrameCache::empty(0, [0.25, 0.5, 0.75]);
        let img = render_cached(&c, &target(), 12);
        for p in img.color.chunks_exact(3) {
            assert_eq!(p, [0.25, 0.5, 0.75]);
        }
    }

    #[test]
    fn renderer_memory_is_stable_after_warm_up() {
        let s = setup(400, 6);
        let src = SourceViews { cameras: &s.cameras, images: &s.images };
        let cache = precompute(&s.model, 0, &src);
        let mut r = CachedRenderer::new();
        let cams: Vec<Camera> = (0..4)
            .map(|i| Camera::look_at(Vec3::new(2.5 * math::cos(i as f64), 0.8, 2.5 * math::sin(i as f64)), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, 32, 32, 0.1, 10.0).unwrap())
            .collect();
        for c in &cams {
            r.render(&cache, c, 12);
        }
        let warm = r.capacity_bytes();
        for _ in 0..5 {
            for c in &cams {
                r.render(&cache, c, 12);
            }
        }
        assert_eq!(r.capacity_bytes(), warm);
    }
}
