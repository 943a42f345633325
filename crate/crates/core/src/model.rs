//! The learnable dynamic scene and its differentiable render path:
//! feature planes → heads → hybrid color → splats → peeling → compositing.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::appearance::{self, ibr_color, ibr_color_backward, point_color};
use crate::camera::{Camera, Projection, RadiusLimits};
use crate::grid::{FeaturePlaneSet, GridConfig, SampleLocation, NUM_PLANES};
use crate::image::{locate_pixel, PixelCell};
use crate::linalg::Vec3;
use crate::nn::{EncodedImage, HeadConfig, HeadSet, ImageEncoder, Tape};
use crate::par;
use crate::render::{self, Composite, PeelBuffer, RasterConfig, Rasterizer, Splat};
use crate::scene::{normalize_coords, PointCloudFrame, SceneSequence};
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub grid: GridConfig,
    pub heads: HeadConfig,
    /// Peeling passes.
    pub k: usize,
    /// Source views blended per target view.
    pub num_sources: usize,
    pub background: [f64; 3],
    pub radius_limits: RadiusLimits,
    pub tile_size: usize,
}

impl ModelConfig {
    pub fn for_frames(num_frames: usize) -> Self {
        Self {
            grid: GridConfig::for_frames(num_frames),
            heads: HeadConfig::default(),
            k: render::K_TRAIN,
            num_sources: appearance::DEFAULT_NUM_SOURCES,
            background: [0.0; 3],
            radius_limits: RadiusLimits::default(),
            tile_size: render::DEFAULT_TILE_SIZE,
        }
    }

    pub fn raster(&self) -> RasterConfig {
        RasterConfig { k: self.k, tile_size: self.tile_size }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub scene: SceneSequence,
    pub planes: FeaturePlaneSet,
    pub heads: HeadSet,
    pub config: ModelConfig,
}

/// Camera and encoded image of every source view at one frame.
#[derive(Debug, Clone, Copy)]
pub struct SourceViews<'a> {
    pub cameras: &'a [Camera],
    pub images: &'a [EncodedImage],
}

/// View-independent per-point quantities of one frame.
#[derive(Debug, Clone)]
pub struct PointAttributes {
    pub frame: usize,
    pub locations: Vec<SampleLocation>,
    /// `n × feature_dim` plane features.
    pub features: Vec<f64>,
    pub radius: Vec<f64>,
    pub density: Vec<f64>,
    /// `n × 3(L+1)²` SH coefficients, coefficient-major per point.
    pub sh: Vec<f64>,
    geometry_tape: Tape,
    sh_tape: Tape,
}

impl PointAttributes {
    pub fn len(&self) -> usize {
        self.radius.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radius.is_empty()
    }
}

/// Per-(point, source view) color samples and blend logits.
#[derive(Debug, Clone)]
pub struct SourceSamples {
    /// Source view indices; the inner dimension of the arrays below.
    pub views: Vec<usize>,
    pub visible: Vec<bool>,
    pub colors: Vec<[f64; 3]>,
    /// `-∞` where the view does not see the point.
    pub logits: Vec<f64>,
    projections: Vec<Projection>,
    cells: Vec<Option<PixelCell>>,
    /// Blend-head batch row of each visible pair.
    rows: Vec<u32>,
    blend_tape: Tape,
}

/// Everything the reverse pass needs from one rendered view.
#[derive(Debug, Clone)]
pub struct FrameForward {
    pub attrs: PointAttributes,
    pub sources: SourceSamples,
    pub target: Camera,
    pub splats: Vec<Splat>,
    pub projections: Vec<Projection>,
    /// Unnormalized view rays `x − camera center`.
    pub rays: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub ibr: Vec<Option<[f64; 3]>>,
    pub colors: Vec<[f64; 3]>,
    pub peel: PeelBuffer,
    pub image: Composite,
    /// Rendered dynamic opacity.
    pub mask: Vec<f64>,
}

/// Gradients for every parameter group touched by one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub frame: usize,
    pub planes: FeaturePlaneSet,
    pub heads: HeadSet,
    pub positions: Vec<Vec3>,
}

impl ModelGrad {
    pub fn is_finite(&self) -> Option<&'static str> {
        if !self.planes.is_finite() {
            Some("plane gradients")
        } else if !self.heads.is_finite() {
            Some("head gradients")
        } else if !self.positions.iter().all(|p| p.is_finite()) {
            Some("position gradients")
        } else {
            None
        }
    }
}

/// Projects a point into a view and builds its splat.
#[inline]
pub fn make_splat(cam: &Camera, x: Vec3, radius: f64, density: f64, limits: RadiusLimits) -> (Splat, Projection) {
    let p = cam.project(x);
    let mut s = Splat { u: p.u, v: p.v, depth: p.depth, radius_px: 0.0, density, visible: false };
    if cam.depth_in_range(p.depth) {
        s.radius_px = cam.projected_radius(p.depth, radius, limits);
        s.visible = cam.is_visible(&p, s.radius_px);
    }
    (s, p)
}

/// Where a source view sees a point: pixel cell of the projection, or
/// `None` when the point is behind the clip range or outside the image.
#[inline]
pub fn source_cell(cam: &Camera, p: &Projection) -> Option<PixelCell> {
    if !cam.depth_in_range(p.depth) {
        return None;
    }
    locate_pixel(p.u, p.v, cam.width as usize, cam.height as usize)
}

impl SceneModel {
    pub fn new<R: Rng + ?Sized>(scene: SceneSequence, config: ModelConfig, rng: &mut R) -> Self {
        let planes = FeaturePlaneSet::random(config.grid, rng);
        let heads = HeadSet::new(planes.feature_dim(), &config.heads, rng);
        Self { scene, planes, heads, config }
    }

    pub fn frame(&self, frame: usize) -> &PointCloudFrame {
        &self.scene.frames[frame]
    }

    pub fn encode(&self, image: &crate::image::Image) -> EncodedImage {
        self.heads.encoder.encode(image)
    }

    pub fn num_params(&self) -> usize {
        self.planes.num_params() + self.heads.num_params() + self.scene.frames.iter().map(|f| 3 * f.len()).sum::<usize>()
    }

    pub fn point_attributes(&self, frame: usize) -> PointAttributes {
        let pts = &self.scene.frames[frame].positions;
        let n = pts.len();
        let t = self.scene.time_of(frame);
        let fd = self.planes.feature_dim();
        let locations: Vec<SampleLocation> =
            par::map_collect(n, |i| self.planes.locate(normalize_coords(&self.scene.bbox, pts[i], t)));
        let mut features = vec![0.0; n * fd];
        if fd > 0 {
            par::for_each_chunk_mut(&mut features, fd, |i, f| self.planes.sample_into(&locations[i], f));
        }
        let geometry_tape = self.heads.geometry.forward_batch(&features, n);
        let sh_tape = self.heads.sh.forward_batch(&features, n);
        let (radius, density) = geometry_tape
            .output
            .chunks_exact(2)
            .map(|y| crate::nn::geometry_from_raw(y[0], y[1], self.heads.r_min))
            .unzip();
        let sh = sh_tape.output.clone();
        PointAttributes { frame, locations, features, radius, density, sh, geometry_tape, sh_tape }
    }

    /// Samples colors and evaluates blend logits for the given source views.
    pub fn sample_sources(&self, attrs: &PointAttributes, sources: &SourceViews, views: &[usize]) -> SourceSamples {
        let pts = &self.scene.frames[attrs.frame].positions;
        let n = pts.len();
        let s = views.len();
        let per_point: Vec<Vec<(Projection, Option<PixelCell>, [f64; 3])>> = par::map_collect(n, |i| {
            views
                .iter()
                .map(|&v| {
                    let cam = &sources.cameras[v];
                    let p = cam.project(pts[i]);
                    let cell = source_cell(cam, &p);
                    let mut c = [0.0; 3];
                    if let Some(cell) = &cell {
                        sources.images[v].rgb().sample(cell, &mut c);
                    }
                    (p, cell, c)
                })
                .collect()
        });
        let mut projections = Vec::with_capacity(n * s);
        let mut cells = Vec::with_capacity(n * s);
        let mut colors = Vec::with_capacity(n * s);
        let mut visible = Vec::with_capacity(n * s);
        let mut rows = Vec::with_capacity(n * s);
        let fd = self.planes.feature_dim();
        let di = self.heads.encoder.feature_dim();
        let width = fd + di;
        let mut input = Vec::new();
        let mut n_rows = 0u32;
        for (i, samples) in per_point.into_iter().enumerate() {
            for ((p, cell, c), &v) in samples.into_iter().zip(views) {
                visible.push(cell.is_some());
                if let Some(cell) = &cell {
                    input.extend_from_slice(&attrs.features[i * fd..(i + 1) * fd]);
                    let at = input.len();
                    input.resize(at + di, 0.0);
                    sources.images[v].features().sample(cell, &mut input[at..]);
                    rows.push(n_rows);
                    n_rows += 1;
                } else {
                    rows.push(u32::MAX);
                }
                projections.push(p);
                cells.push(cell);
                colors.push(c);
            }
        }
        debug_assert_eq!(input.len(), n_rows as usize * width);
        let blend_tape = self.heads.blend.forward_batch(&input, n_rows as usize);
        let logits = rows.iter().map(|&r| if r == u32::MAX { f64::NEG_INFINITY } else { blend_tape.output[r as usize] }).collect();
        SourceSamples { views: views.to_vec(), visible, colors, logits, projections, cells, rows, blend_tape }
    }

    pub fn select_sources(&self, target: &Camera, cameras: &[Camera]) -> Vec<usize> {
        appearance::select_source_views(target, cameras, self.scene.bbox.center(), self.config.num_sources)
    }

    /// Full differentiable render of one frame from `target`.
    pub fn forward(&self, frame: usize, target: &Camera, sources: &SourceViews) -> FrameForward {
        let attrs = self.point_attributes(frame);
        let views = self.select_sources(target, sources.cameras);
        let samples = self.sample_sources(&attrs, sources, &views);
        self.forward_with(attrs, samples, target)
    }

    /// Render from precomputed attributes and source samples.
    pub fn forward_with(&self, attrs: PointAttributes, sources: SourceSamples, target: &Camera) -> FrameForward {
        let pts = &self.scene.frames[attrs.frame].positions;
        let dynamic = &self.scene.frames[attrs.frame].dynamic;
        let n = pts.len();
        let s = sources.views.len();
        let nc = sh::num_coeffs(self.heads.sh_degree) * 3;
        let center = target.center();
        let limits = self.config.radius_limits;

        let (splats, projections): (Vec<Splat>, Vec<Projection>) =
            par::map_collect(n, |i| make_splat(target, pts[i], attrs.radius[i], attrs.density[i], limits)).into_iter().unzip();
        let rays: Vec<Vec3> = pts.iter().map(|&x| x - center).collect();
        let mut weights = vec![0.0; n * s];
        let shaded: Vec<(Option<[f64; 3]>, [f64; 3])> = {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let r = i * s..(i + 1) * s;
                let ibr = ibr_color(&sources.logits[r.clone()], &sources.colors[r.clone()], &sources.visible[r.clone()], &mut weights[r]);
                let c_sh = sh::eval_sh_slice(self.heads.sh_degree, &attrs.sh[i * nc..(i + 1) * nc], rays[i].normalized());
                out.push((ibr, point_color(ibr, c_sh)));
            }
            out
        };
        let (ibr, colors): (Vec<_>, Vec<_>) = shaded.into_iter().unzip();

        let (w, h) = (target.width as usize, target.height as usize);
        let mut peel = PeelBuffer::default();
        Rasterizer::new().depth_peel(&splats, w, h, self.config.raster(), &mut peel);
        let image = render::composite(&peel, &colors, self.config.background);
        let mask = render::render_mask(&peel, dynamic);
        FrameForward {
            attrs,
            sources,
            target: target.clone(),
            splats,
            projections,
            rays,
            weights,
            ibr,
            colors,
            peel,
            image,
            mask,
        }
    }

    /// Reverse pass given `∂L/∂image` (clamped colors) and optionally
    /// `∂L/∂mask`.
    pub fn backward(&self, fwd: &FrameForward, dimage: &[f64], dmask: Option<&[f64]>, sources: &SourceViews) -> ModelGrad {
        let frame = fwd.attrs.frame;
        let pts = &self.scene.frames[frame].positions;
        let dynamic = &self.scene.frames[frame].dynamic;
        let n = pts.len();
        let s = fwd.sources.views.len();
        let deg = self.heads.sh_degree;
        let nc = sh::num_coeffs(deg) * 3;
        let fd = self.planes.feature_dim();
        let di = self.heads.encoder.feature_dim();
        let limits = self.config.radius_limits;
        let target = &fwd.target;

        let mut fg = render::composite_backward(&fwd.peel, &fwd.colors, self.config.background, &fwd.image, dimage, None);
        if let Some(dm) = dmask {
            render::mask_backward(&fwd.peel, dynamic, dm, &mut fg);
        }
        let sg = render::splat_backward(&fwd.peel, &fwd.splats, &fg.dalpha);
        let mut dcol = vec![[0.0; 3]; n];
        for (f, d) in fwd.peel.all_fragments().iter().zip(&fg.dcolor) {
            let c = &mut dcol[f.point as usize];
            c[0] += d[0];
            c[1] += d[1];
            c[2] += d[2];
        }

        let mut grad = ModelGrad { frame, planes: self.planes.zeros_like(), heads: self.heads.zeros_like(), positions: vec![Vec3::ZERO; n] };
        let mut dgeo = vec![0.0; n * 2];
        let mut dsh = vec![0.0; n * nc];
        let mut dlogit_rows = vec![0.0; fwd.sources.blend_tape.batch];
        let mut dlogits = vec![0.0; s];
        let mut dcimg = vec![[0.0; 3]; s];

        for i in 0..n {
            let mut dx = Vec3::ZERO;
            let sp = &fwd.splats[i];
            let g = sg[i];
            if sp.visible {
                dgeo[i * 2 + 1] = g.density;
                let mut ddepth = 0.0;
                if let Some((dr_world, dr_depth)) = target.projected_radius_grad(sp.depth, fwd.attrs.radius[i], limits) {
                    dgeo[i * 2] = g.radius_px * dr_world;
                    ddepth = g.radius_px * dr_depth;
                }
                let j = target.project_jacobian(&fwd.projections[i]);
                dx += j[0] * g.u + j[1] * g.v + j[2] * ddepth;
            }
            let dc = dcol[i];
            if dc != [0.0; 3] {
                let ray = fwd.rays[i];
                let norm = ray.norm();
                dx += sh::eval_sh_backward(deg, &fwd.attrs.sh[i * nc..(i + 1) * nc], ray * (1.0 / norm), norm, dc, &mut dsh[i * nc..(i + 1) * nc]);
                if let Some(c_ibr) = fwd.ibr[i] {
                    let r = i * s..(i + 1) * s;
                    ibr_color_backward(&fwd.weights[r.clone()], &fwd.sources.colors[r], c_ibr, dc, &mut dlogits, &mut dcimg);
                    for k in 0..s {
                        let pair = i * s + k;
                        let Some(cell) = &fwd.sources.cells[pair] else { continue };
                        let v = fwd.sources.views[k];
                        dlogit_rows[fwd.sources.rows[pair] as usize] = dlogits[k];
                        let (du, dv) = sources.images[v].rgb().sample_grad_uv(cell, &dcimg[k]);
                        let jac = sources.cameras[v].project_jacobian(&fwd.sources.projections[pair]);
                        dx += jac[0] * du + jac[1] * dv;
                    }
                }
            }
            grad.positions[i] = dx;
        }

        // heads
        let mut dfeat = self.heads.geometry.backward_batch(&fwd.attrs.geometry_tape, &dgeo, &mut grad.heads.geometry);
        let dfeat_sh = self.heads.sh.backward_batch(&fwd.attrs.sh_tape, &dsh, &mut grad.heads.sh);
        for (a, b) in dfeat.iter_mut().zip(&dfeat_sh) {
            *a += b;
        }
        let dblend = self.heads.blend.backward_batch(&fwd.sources.blend_tape, &dlogit_rows, &mut grad.heads.blend);
        let width = fd + di;
        for i in 0..n {
            for k in 0..s {
                let pair = i * s + k;
                let row = fwd.sources.rows[pair];
                if row == u32::MAX {
                    continue;
                }
                let drow = &dblend[row as usize * width..(row as usize + 1) * width];
                for (a, b) in dfeat[i * fd..(i + 1) * fd].iter_mut().zip(&drow[..fd]) {
                    *a += b;
                }
                let dimg = &drow[fd..];
                let cell = fwd.sources.cells[pair].as_ref().unwrap();
                let v = fwd.sources.views[k];
                let enc = &sources.images[v];
                let (du, dv) = enc.features().sample_grad_uv(cell, dimg);
                let jac = sources.cameras[v].project_jacobian(&fwd.sources.projections[pair]);
                grad.positions[i] += jac[0] * du + jac[1] * dv;
                if let (ImageEncoder::ShallowConv(conv), EncodedImage::Conv(feats), ImageEncoder::ShallowConv(gconv)) =
                    (&self.heads.encoder, enc, &mut grad.heads.encoder)
                {
                    conv.accumulate_backward(feats, cell, dimg, gconv);
                }
            }
        }

        // planes and the coordinate normalization
        for i in 0..n {
            let dq = self.planes.accumulate_backward(&fwd.attrs.locations[i], &dfeat[i * fd..(i + 1) * fd], &mut grad.planes);
            let ng = self.scene.bbox.normalize_grad(pts[i]);
            grad.positions[i] += Vec3::new(dq[0] * ng[0], dq[1] * ng[1], dq[2] * ng[2]);
        }
        grad
    }

    /// Hash of every discrete decision taken by a forward pass: plane cells,
    /// ReLU gates, visibility, radius clamps, fragment lists and the output
    /// clamp. Equal signatures mean the loss is smooth between two
    /// parameter settings.
    pub fn branch_signature(&self, fwd: &FrameForward, sources: &SourceViews) -> u64 {
        let mut h = Fnv::new();
        for loc in &fwd.attrs.locations {
            for c in &loc.cells[..NUM_PLANES] {
                h.write(c.0 as u64);
                h.write(c.1 as u64);
            }
            for inside in loc.inside {
                h.write(inside as u64);
            }
        }
        for tape in [&fwd.attrs.geometry_tape, &fwd.attrs.sh_tape, &fwd.sources.blend_tape] {
            for l in 0..tape.num_layers().saturating_sub(1) {
                h.write_bits(tape.pre_activations(l).iter().map(|&z| z > 0.0));
            }
        }
        for c in &fwd.sources.cells {
            match c {
                Some(c) => {
                    h.write(c.x0 as u64);
                    h.write(c.y0 as u64);
                }
                None => h.write(u64::MAX),
            }
        }
        for (sp, r) in fwd.splats.iter().zip(&fwd.attrs.radius) {
            h.write(sp.visible as u64);
            if sp.visible {
                h.write(fwd.target.projected_radius_grad(sp.depth, *r, self.config.radius_limits).is_some() as u64);
            }
        }
        for slot in 0..fwd.peel.num_slots() {
            h.write(u64::MAX - 1);
            for f in fwd.peel.slot_fragments(slot) {
                h.write(f.point as u64);
            }
        }
        h.write_bits(fwd.image.color_raw.iter().map(|v| (0.0..=1.0).contains(v)));
        if let ImageEncoder::ShallowConv(_) = self.heads.encoder {
            for (pair, c) in fwd.sources.cells.iter().enumerate() {
                let Some(c) = c else { continue };
                let feats = sources.images[fwd.sources.views[pair % fwd.sources.views.len()]].features();
                for ((x, y), _) in crate::image::FeatureMap::corners(c) {
                    h.write_bits(feats.pixel(x, y).iter().map(|&v| v > 0.0));
                }
            }
        }
        h.finish()
    }

    /// Clamps every point of `frame` back into the scene box.
    pub fn clamp_frame(&mut self, frame: usize) {
        let bbox = self.scene.bbox;
        for p in &mut self.scene.frames[frame].positions {
            *p = bbox.clamp(*p);
        }
    }

    pub fn is_finite(&self) -> Option<&'static str> {
        if !self.planes.is_finite() {
            Some("feature planes")
        } else if !self.heads.is_finite() {
            Some("heads")
        } else if !self.scene.frames.iter().all(|f| f.positions.iter().all(|p| p.is_finite())) {
            Some("point positions")
        } else {
            None
        }
    }
}

/// 64-bit FNV-1a.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_bits(&mut self, bits: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut n = 0;
        for b in bits {
            word |= (b as u64) << (n % 64);
            n += 1;
            if n % 64 == 0 {
                self.write(word);
                word = 0;
            }
        }
        self.write(word);
        self.write(n as u64);
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
