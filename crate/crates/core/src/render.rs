//! Software depth peeling of point splats and front-to-back compositing.
//!
//! A splat covers pixel `u` when `‖π(x) − u‖² < r²` and contributes opacity
//! `α = σ·(1 − ‖π(x) − u‖²/r²)`. Fragments at a pixel are ordered by
//! `(depth, point index)`; peeling pass `k` yields the smallest key strictly
//! greater than the key found by pass `k − 1`.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math;
use crate::par;

pub const DEFAULT_TILE_SIZE: usize = 16;
pub const K_TRAIN: usize = 15;
pub const K_INFERENCE: usize = 12;

/// A projected point ready for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Splat {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub radius_px: f64,
    pub density: f64,
    /// False for culled points; they produce no fragments.
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Fragment {
    pub point: u32,
    pub depth: f64,
    pub dist2: f64,
    pub alpha: f64,
}

#[inline]
fn key_cmp(a: (f64, u32), b: (f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl Splat {
    /// Squared pixel distance to the pixel center `(x, y)` when covered.
    #[inline]
    pub fn coverage(&self, x: usize, y: usize) -> Option<f64> {
        let dx = self.u - x as f64;
        let dy = self.v - y as f64;
        let d2 = dx * dx + dy * dy;
        (d2 < self.radius_px * self.radius_px).then_some(d2)
    }

    #[inline]
    pub fn alpha(&self, dist2: f64) -> f64 {
        splat_alpha(self.density, dist2, self.radius_px)
    }

    /// Inclusive pixel rectangle that can contain covered pixel centers.
    #[inline]
    fn pixel_rect(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        if !self.visible || !(self.radius_px > 0.0) {
            return None;
        }
        let x0 = math::ceil(self.u - self.radius_px).max(0.0);
        let x1 = math::floor(self.u + self.radius_px).min(width as f64 - 1.0);
        let y0 = math::ceil(self.v - self.radius_px).max(0.0);
        let y1 = math::floor(self.v + self.radius_px).min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 || !x0.is_finite() || !y0.is_finite() {
            return None;
        }
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }
}

/// Opacity of a splat at squared pixel distance `dist2`.
#[inline]
pub fn splat_alpha(density: f64, dist2: f64, radius_px: f64) -> f64 {
    density * (1.0 - dist2 / (radius_px * radius_px)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterConfig {
    pub k: usize,
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { k: K_TRAIN, tile_size: DEFAULT_TILE_SIZE }
    }
}

/// Per-pixel fragment lists (at most `k` each), stored tile-major.
#[derive(Debug, Clone, Default)]
pub struct PeelBuffer {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub tile_size: usize,
    tiles_x: usize,
    /// `offsets[s]..offsets[s+1]` are the fragments of pixel slot `s`.
    offsets: Vec<u32>,
    frags: Vec<Fragment>,
}

impl PeelBuffer {
    #[inline]
    pub fn slot(&self, x: usize, y: usize) -> usize {
        let ts = self.tile_size;
        let tile = (y / ts) * self.tiles_x + x / ts;
        tile * ts * ts + (y % ts) * ts + x % ts
    }

    /// Pixel of a slot, or `None` for padding slots outside the image.
    #[inline]
    pub fn slot_pixel(&self, slot: usize) -> Option<(usize, usize)> {
        let ts = self.tile_size;
        let tile = slot / (ts * ts);
        let local = slot % (ts * ts);
        let x = (tile % self.tiles_x) * ts + local % ts;
        let y = (tile / self.tiles_x) * ts + local / ts;
        (x < self.width && y < self.height).then_some((x, y))
    }

    pub fn num_slots(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Front-to-back fragments at pixel `(x, y)`.
    #[inline]
    pub fn fragments(&self, x: usize, y: usize) -> &[Fragment] {
        self.slot_fragments(self.slot(x, y))
    }

    #[inline]
    pub fn slot_fragments(&self, slot: usize) -> &[Fragment] {
        &self.frags[self.offsets[slot] as usize..self.offsets[slot + 1] as usize]
    }

    #[inline]
    pub fn slot_range(&self, slot: usize) -> core::ops::Range<usize> {
        self.offsets[slot] as usize..self.offsets[slot + 1] as usize
    }

    /// Every fragment, in slot order.
    pub fn all_fragments(&self) -> &[Fragment] {
        &self.frags[..self.offsets.last().copied().unwrap_or(0) as usize]
    }

    pub fn total_fragments(&self) -> usize {
        self.all_fragments().len()
    }

    pub fn max_depth_complexity(&self) -> usize {
        (0..self.num_slots()).map(|s| self.slot_fragments(s).len()).max().unwrap_or(0)
    }

    /// Bytes reserved by the buffer's allocations.
    pub fn capacity_bytes(&self) -> usize {
        self.offsets.capacity() * core::mem::size_of::<u32>() + self.frags.capacity() * core::mem::size_of::<Fragment>()
    }
}

/// Reusable scratch state for peeling; keeps allocations across frames.
#[derive(Debug, Clone, Default)]
pub struct Rasterizer {
    order: Vec<u32>,
    rects: Vec<(u32, u32, u32, u32)>,
    bin_offsets: Vec<u32>,
    bins: Vec<u32>,
    counts: Vec<u32>,
}

struct TileGeometry {
    ts: usize,
    tiles_x: usize,
    tiles_y: usize,
}

impl TileGeometry {
    fn new(width: usize, height: usize, ts: usize) -> Self {
        Self { ts, tiles_x: width.div_ceil(ts), tiles_y: height.div_ceil(ts) }
    }

    fn num_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

impl Rasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capacity_bytes(&self) -> usize {
        self.order.capacity() * 4 + self.rects.capacity() * 16 + (self.bin_offsets.capacity() + self.bins.capacity() + self.counts.capacity()) * 4
    }

    /// Sorts visible splats by `(depth, index)` and bins them into tiles;
    /// bins preserve the sorted order.
    fn bin(&mut self, splats: &[Splat], width: usize, height: usize, geo: &TileGeometry) {
        self.order.clear();
        self.order.extend((0..splats.len() as u32).filter(|&i| splats[i as usize].visible));
        par::sort_unstable_by(&mut self.order, |&a, &b| {
            key_cmp((splats[a as usize].depth, a), (splats[b as usize].depth, b))
        });
        self.rects.clear();
        self.bin_offsets.clear();
        self.bin_offsets.resize(geo.num_tiles() + 1, 0);
        let ts = geo.ts;
        for &i in &self.order {
            let r = match splats[i as usize].pixel_rect(width, height) {
                Some((x0, x1, y0, y1)) => (x0 as u32, x1 as u32, y0 as u32, y1 as u32),
                None => (1, 0, 1, 0),
            };
            if r.0 <= r.1 {
                for ty in r.2 as usize / ts..=r.3 as usize / ts {
                    for tx in r.0 as usize / ts..=r.1 as usize / ts {
                        self.bin_offsets[ty * geo.tiles_x + tx + 1] += 1;
                    }
                }
            }
            self.rects.push(r);
        }
        for t in 0..geo.num_tiles() {
            self.bin_offsets[t + 1] += self.bin_offsets[t];
        }
        self.bins.clear();
        self.bins.resize(self.bin_offsets[geo.num_tiles()] as usize, 0);
        let mut cursor: Vec<u32> = self.bin_offsets[..geo.num_tiles()].to_vec();
        for (&i, r) in self.order.iter().zip(&self.rects) {
            if r.0 > r.1 {
                continue;
            }
            for ty in r.2 as usize / ts..=r.3 as usize / ts {
                for tx in r.0 as usize / ts..=r.1 as usize / ts {
                    let t = ty * geo.tiles_x + tx;
                    self.bins[cursor[t] as usize] = i;
                    cursor[t] += 1;
                }
            }
        }
    }

    /// Runs all `k` peeling passes at once: each tile walks its depth-sorted
    /// bin and every pixel keeps the first `k` covering splats, which are
    /// exactly the fragments the `k` successive passes would find.
    pub fn depth_peel(&mut self, splats: &[Splat], width: usize, height: usize, cfg: RasterConfig, out: &mut PeelBuffer) {
        assert!(cfg.k >= 1, "depth peeling needs at least one pass");
        assert!((1..=64).contains(&cfg.tile_size), "tile size must be in 1..=64");
        let geo = TileGeometry::new(width, height, cfg.tile_size);
        self.bin(splats, width, height, &geo);
        let ts = geo.ts;
        let tile_slots = ts * ts;
        let n_slots = geo.num_tiles() * tile_slots;
        self.counts.clear();
        self.counts.resize(n_slots, 0);
        let k = cfg.k as u32;
        let bins = &self.bins;
        let bin_offsets = &self.bin_offsets;

        // pass 1: fragment count per pixel, capped at k
        par::for_each_chunk_mut(&mut self.counts, tile_slots, |tile, counts| {
            let (tx, ty) = (tile % geo.tiles_x, tile / geo.tiles_x);
            let (ox, oy) = (tx * ts, ty * ts);
            let tw = ts.min(width - ox);
            let th = ts.min(height - oy);
            let mut full = 0usize;
            for &i in &bins[bin_offsets[tile] as usize..bin_offsets[tile + 1] as usize] {
                let s = &splats[i as usize];
                let (x0, x1, y0, y1) = s.pixel_rect(width, height).unwrap();
                for y in y0.max(oy)..=y1.min(oy + th - 1) {
                    for x in x0.max(ox)..=x1.min(ox + tw - 1) {
                        let c = &mut counts[(y - oy) * ts + (x - ox)];
                        if *c < k && s.coverage(x, y).is_some() {
                            *c += 1;
                            if *c == k {
                                full += 1;
                            }
                        }
                    }
                }
                if full == tw * th {
                    break;
                }
            }
        });

        out.width = width;
        out.height = height;
        out.k = cfg.k;
        out.tile_size = ts;
        out.tiles_x = geo.tiles_x;
        out.offsets.clear();
        out.offsets.reserve(n_slots + 1);
        out.offsets.push(0);
        let mut total = 0u32;
        for &c in &self.counts {
            total += c;
            out.offsets.push(total);
        }
        out.frags.clear();
        out.frags.resize(total as usize, Fragment::default());

        // pass 2: fill, one disjoint slice per tile
        let mut parts = Vec::with_capacity(geo.num_tiles());
        let mut rest: &mut [Fragment] = &mut out.frags;
        for t in 0..geo.num_tiles() {
            let len = (out.offsets[(t + 1) * tile_slots] - out.offsets[t * tile_slots]) as usize;
            let (head, tail) = rest.split_at_mut(len);
            parts.push(head);
            rest = tail;
        }
        let offsets = &out.offsets;
        par::for_each_part(parts, |tile, frags| {
            let (tx, ty) = (tile % geo.tiles_x, tile / geo.tiles_x);
            let (ox, oy) = (tx * ts, ty * ts);
            let tw = ts.min(width - ox);
            let th = ts.min(height - oy);
            let base = offsets[tile * tile_slots];
            let mut cursor = [0u32; 64 * 64];
            let cursor = &mut cursor[..tile_slots];
            for (l, c) in cursor.iter_mut().enumerate() {
                *c = offsets[tile * tile_slots + l] - base;
            }
            let end = |l: usize| offsets[tile * tile_slots + l + 1] - base;
            let mut full = 0usize;
            for &i in &bins[bin_offsets[tile] as usize..bin_offsets[tile + 1] as usize] {
                let s = &splats[i as usize];
                let (x0, x1, y0, y1) = s.pixel_rect(width, height).unwrap();
                for y in y0.max(oy)..=y1.min(oy + th - 1) {
                    for x in x0.max(ox)..=x1.min(ox + tw - 1) {
                        let l = (y - oy) * ts + (x - ox);
                        if cursor[l] < end(l) {
                            if let Some(d2) = s.coverage(x, y) {
                                frags[cursor[l] as usize] = Fragment { point: i, depth: s.depth, dist2: d2, alpha: s.alpha(d2) };
                                cursor[l] += 1;
                                if cursor[l] == end(l) {
                                    full += 1;
                                }
                            }
                        }
                    }
                }
                if full == tw * th {
                    break;
                }
            }
        });
    }
}

/// `K` peeling passes into a fresh buffer.
pub fn depth_peel(splats: &[Splat], width: usize, height: usize, k: usize) -> PeelBuffer {
    let mut out = PeelBuffer::default();
    Rasterizer::new().depth_peel(splats, width, height, RasterConfig { k, ..RasterConfig::default() }, &mut out);
    out
}

/// One peeling pass: per pixel (row-major), the covering splat with the
/// smallest `(depth, index)` strictly greater than `prev`.
pub fn rasterize_layer(splats: &[Splat], width: usize, height: usize, prev: &[Option<(f64, u32)>]) -> Vec<Option<Fragment>> {
    assert_eq!(prev.len(), width * height);
    let geo = TileGeometry::new(width, height, DEFAULT_TILE_SIZE);
    let mut r = Rasterizer::new();
    r.bin(splats, width, height, &geo);
    let mut out = vec![None; width * height];
    for (p, slot) in out.iter_mut().enumerate() {
        let (x, y) = (p % width, p / width);
        let tile = (y / geo.ts) * geo.tiles_x + x / geo.ts;
        let mut best: Option<Fragment> = None;
        for &i in &r.bins[r.bin_offsets[tile] as usize..r.bin_offsets[tile + 1] as usize] {
            let s = &splats[i as usize];
            let Some(d2) = s.coverage(x, y) else { continue };
            if let Some(pk) = prev[p] {
                if key_cmp((s.depth, i), pk) != Ordering::Greater {
                    continue;
                }
            }
            if best.map_or(true, |b| key_cmp((s.depth, i), (b.depth, b.point)) == Ordering::Less) {
                best = Some(Fragment { point: i, depth: s.depth, dist2: d2, alpha: s.alpha(d2) });
            }
        }
        *slot = best;
    }
    out
}

/// Literal multi-pass peeling: `k` calls of [`rasterize_layer`]. Returns
/// per-pixel (row-major) fragment lists.
pub fn depth_peel_multipass(splats: &[Splat], width: usize, height: usize, k: usize) -> Vec<Vec<Fragment>> {
    let mut prev = vec![None; width * height];
    let mut lists = vec![Vec::new(); width * height];
    for _ in 0..k {
        let layer = rasterize_layer(splats, width, height, &prev);
        for (p, f) in layer.into_iter().enumerate() {
            if let Some(f) = f {
                prev[p] = Some((f.depth, f.point));
                lists[p].push(f);
            }
        }
    }
    lists
}

/// Composited image and accumulated opacity, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Composite {
    pub width: usize,
    pub height: usize,
    /// Final colors clamped to `[0, 1]`, `height × width × 3`.
    pub color: Vec<f64>,
    /// Colors before clamping, background included.
    pub color_raw: Vec<f64>,
    /// `Σ T_k α_k` per pixel.
    pub alpha: Vec<f64>,
}

impl Composite {
    pub fn capacity_bytes(&self) -> usize {
        (self.color.capacity() + self.color_raw.capacity() + self.alpha.capacity()) * 8
    }
}

/// Front-to-back accumulation over one pixel's fragments.
#[inline]
fn composite_pixel(frags: &[Fragment], colors: &[[f64; 3]], background: [f64; 3]) -> ([f64; 3], f64) {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut a = 0.0;
    for f in frags {
        let w = t * f.alpha;
        let col = &colors[f.point as usize];
        c[0] += w * col[0];
        c[1] += w * col[1];
        c[2] += w * col[2];
        a += w;
        t *= 1.0 - f.alpha;
    }
    for ch in 0..3 {
        c[ch] += t * background[ch];
    }
    (c, a)
}

/// Volume compositing of a peel buffer with per-point colors.
pub fn composite(buf: &PeelBuffer, colors: &[[f64; 3]], background: [f64; 3]) -> Composite {
    let mut out = Composite::default();
    composite_into(buf, colors, background, &mut out);
    out
}

pub fn composite_into(buf: &PeelBuffer, colors: &[[f64; 3]], background: [f64; 3], out: &mut Composite) {
    let (w, h) = (buf.width, buf.height);
    out.width = w;
    out.height = h;
    out.color_raw.clear();
    out.color_raw.resize(w * h * 3, 0.0);
    out.alpha.clear();
    out.alpha.resize(w * h, 0.0);
    par::for_each_chunk_mut(&mut out.color_raw, w * 3, |y, row| {
        for x in 0..w {
            let (c, _) = composite_pixel(buf.fragments(x, y), colors, background);
            row[x * 3..x * 3 + 3].copy_from_slice(&c);
        }
    });
    par::for_each_chunk_mut(&mut out.alpha, w, |y, row| {
        for (x, a) in row.iter_mut().enumerate() {
            *a = buf.fragments(x, y).iter().fold((1.0, 0.0), |(t, acc), f| (t * (1.0 - f.alpha), acc + t * f.alpha)).1;
        }
    });
    out.color.clear();
    out.color.extend(out.color_raw.iter().map(|v| v.clamp(0.0, 1.0)));
}

/// Accumulated opacity of dynamic-point fragments only; transmittance runs
/// over the dynamic subsequence.
pub fn render_mask(buf: &PeelBuffer, dynamic: &[bool]) -> Vec<f64> {
    let (w, h) = (buf.width, buf.height);
    let mut m = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut m, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut t = 1.0;
            let mut acc = 0.0;
            for f in buf.fragments(x, y).iter().filter(|f| dynamic[f.point as usize]) {
                acc += t * f.alpha;
                t *= 1.0 - f.alpha;
            }
            *v = acc;
        }
    });
    m
}

/// Per-fragment gradients, indexed like [`PeelBuffer::all_fragments`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FragmentGrads {
    pub dalpha: Vec<f64>,
    pub dcolor: Vec<[f64; 3]>,
}

/// Reverse pass of [`composite`] followed by the output clamp.
///
/// `dcolor` is the gradient with respect to the clamped color image and
/// `dalpha` with respect to the opacity image (both row-major). Uses the
/// back-to-front recurrence `R_k = α_k g_k + (1 − α_k) R_{k+1}`, so no
/// division by `1 − α_k` is needed.
pub fn composite_backward(
    buf: &PeelBuffer,
    colors: &[[f64; 3]],
    background: [f64; 3],
    forward: &Composite,
    dcolor: &[f64],
    dalpha: Option<&[f64]>,
) -> FragmentGrads {
    let n = buf.total_fragments();
    let mut grads = FragmentGrads { dalpha: vec![0.0; n], dcolor: vec![[0.0; 3]; n] };
    let w = buf.width;
    let tile_slots = buf.tile_size * buf.tile_size;
    let ranges = tile_ranges(buf);
    let mut parts = Vec::with_capacity(ranges.len());
    let (mut ra, mut rc): (&mut [f64], &mut [[f64; 3]]) = (&mut grads.dalpha, &mut grads.dcolor);
    for r in &ranges {
        let (a, ta) = ra.split_at_mut(r.len());
        let (c, tc) = rc.split_at_mut(r.len());
        parts.push((a, c));
        ra = ta;
        rc = tc;
    }
    par::for_each_part(parts, |tile, (ga, gc)| {
        let base = ranges[tile].start;
        let mut trans: Vec<f64> = Vec::new();
        for slot in tile * tile_slots..(tile + 1) * tile_slots {
            let Some((x, y)) = buf.slot_pixel(slot) else { continue };
            let frags = buf.slot_fragments(slot);
            if frags.is_empty() {
                continue;
            }
            let p = y * w + x;
            let mut dc = [0.0; 3];
            for ch in 0..3 {
                let raw = forward.color_raw[p * 3 + ch];
                if (0.0..=1.0).contains(&raw) {
                    dc[ch] = dcolor[p * 3 + ch];
                }
            }
            let da = dalpha.map_or(0.0, |d| d[p]);
            trans.clear();
            let mut t = 1.0;
            for f in frags {
                trans.push(t);
                t *= 1.0 - f.alpha;
            }
            let mut r = background[0] * dc[0] + background[1] * dc[1] + background[2] * dc[2];
            let off = buf.slot_range(slot).start - base;
            for (k, f) in frags.iter().enumerate().rev() {
                let c = &colors[f.point as usize];
                let g = c[0] * dc[0] + c[1] * dc[1] + c[2] * dc[2] + da;
                let tk = trans[k];
                ga[off + k] = tk * (g - r);
                let wgt = tk * f.alpha;
                gc[off + k] = [wgt * dc[0], wgt * dc[1], wgt * dc[2]];
                r = f.alpha * g + (1.0 - f.alpha) * r;
            }
        }
    });
    grads
}

/// Adds the reverse pass of [`render_mask`] into `grads.dalpha`.
pub fn mask_backward(buf: &PeelBuffer, dynamic: &[bool], dmask: &[f64], grads: &mut FragmentGrads) {
    let w = buf.width;
    let mut trans: Vec<(usize, f64, f64)> = Vec::new();
    for slot in 0..buf.num_slots() {
        let Some((x, y)) = buf.slot_pixel(slot) else { continue };
        let g = dmask[y * w + x];
        if g == 0.0 {
            continue;
        }
        let start = buf.slot_range(slot).start;
        trans.clear();
        let mut t = 1.0;
        for (k, f) in buf.slot_fragments(slot).iter().enumerate() {
            if dynamic[f.point as usize] {
                trans.push((start + k, t, f.alpha));
                t *= 1.0 - f.alpha;
            }
        }
        let mut r = 0.0;
        for &(idx, tk, a) in trans.iter().rev() {
            grads.dalpha[idx] += tk * (g - r);
            r = a * g + (1.0 - a) * r;
        }
    }
}

fn tile_ranges(buf: &PeelBuffer) -> Vec<core::ops::Range<usize>> {
    let tile_slots = buf.tile_size * buf.tile_size;
    let n_tiles = buf.num_slots() / tile_slots.max(1);
    (0..n_tiles)
        .map(|t| buf.offsets[t * tile_slots] as usize..buf.offsets[(t + 1) * tile_slots] as usize)
        .collect()
}

/// Gradients of the loss with respect to one splat's screen-space
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad {
    pub density: f64,
    pub u: f64,
    pub v: f64,
    pub radius_px: f64,
}

/// Chains per-fragment `∂L/∂α` through the splat opacity. Accumulates in
/// slot order, so the result is independent of thread scheduling.
pub fn splat_backward(buf: &PeelBuffer, splats: &[Splat], dalpha: &[f64]) -> Vec<SplatGrad> {
    let mut out = vec![SplatGrad::default(); splats.len()];
    for slot in 0..buf.num_slots() {
        let range = buf.slot_range(slot);
        if range.is_empty() {
            continue;
        }
        let (x, y) = buf.slot_pixel(slot).expect("fragments only exist on image pixels");
        for (f, &da) in buf.all_fragments()[range.clone()].iter().zip(&dalpha[range]) {
            if da == 0.0 {
                continue;
            }
            let s = &splats[f.point as usize];
            let r2 = s.radius_px * s.radius_px;
            let g = &mut out[f.point as usize];
            g.density += da * (1.0 - f.dist2 / r2);
            let dd2 = -da * s.density / r2;
            g.u += dd2 * 2.0 * (s.u - x as f64);
            g.v += dd2 * 2.0 * (s.v - y as f64);
            g.radius_px += da * s.density * 2.0 * f.dist2 / (r2 * s.radius_px);
        }
    }
    out
}

/// Reference renderer: gathers every covering splat per pixel, sorts by
/// `(depth, index)` and composites with explicit transmittance products.
/// Keeps the first `k` entries of each sorted list.
pub fn oracle_full_sort_render(splats: &[Splat], colors: &[[f64; 3]], width: usize, height: usize, k: usize, background: [f64; 3]) -> Composite {
    let mut out = Composite { width, height, color: vec![0.0; width * height * 3], color_raw: vec![0.0; width * height * 3], alpha: vec![0.0; width * height] };
    let mut list: Vec<(f64, u32, f64)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            list.clear();
            for (i, s) in splats.iter().enumerate() {
                if !s.visible {
                    continue;
                }
                let dx = s.u - x as f64;
                let dy = s.v - y as f64;
                let d2 = dx * dx + dy * dy;
                if d2 < s.radius_px * s.radius_px {
                    list.push((s.depth, i as u32, s.density * (1.0 - d2 / (s.radius_px * s.radius_px))));
                }
            }
            list.sort_by(|a, b| key_cmp((a.0, a.1), (b.0, b.1)));
            list.truncate(k);
            let p = y * width + x;
            let mut a_sum = 0.0;
            let mut c = [0.0; 3];
            for k in 0..list.len() {
                let mut tk = 1.0;
                for j in 0..k {
                    tk *= 1.0 - list[j].2;
                }
                a_sum += tk * list[k].2;
                for ch in 0..3 {
                    c[ch] += tk * list[k].2 * colors[list[k].1 as usize][ch];
                }
            }
            let t_end: f64 = list.iter().map(|e| 1.0 - e.2).product();
            for ch in 0..3 {
                out.color_raw[p * 3 + ch] = c[ch] + t_end * background[ch];
                out.color[p * 3 + ch] = out.color_raw[p * 3 + ch].clamp(0.0, 1.0);
            }
            out.alpha[p] = a_sum;
        }
    }
    out
}
