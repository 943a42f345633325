//! Trained-model files.
//!
//! Little-endian throughout: magic `4K4D`, `u32` version, then sections of
//! `u32` name length, UTF-8 name, `u64` payload length, payload. Readers
//! skip sections they do not know. Parameters are stored as `f64` so a
//! round trip is bit-exact.

use std::fs;
use std::path::Path;

use peel4d_core::grid::{FeaturePlane, FeaturePlaneSet, GridConfig, NUM_PLANES};
use peel4d_core::image::Image;
use peel4d_core::model::{ModelConfig, SceneModel};
use peel4d_core::nn::{Activation, Conv3x3, HeadConfig, HeadSet, ImageEncoder, ImageFeatureMode, Linear, Mlp};
use peel4d_core::scene::{Aabb, PointCloudFrame, SceneSequence};
use peel4d_core::{Camera, Mat3, RadiusLimits, Vec3};

use crate::pngio;

pub const MAGIC: &[u8; 4] = b"4K4D";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("missing section {0:?}")]
    MissingSection(&'static str),
    #[error("section {section:?}: {message}")]
    Invalid { section: String, message: String },
}

/// Source views kept with the model so it can render without the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    pub cameras: Vec<Camera>,
    /// `images[frame][view]`, stored as 8-bit RGB.
    pub images: Vec<Vec<Image>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SceneModel,
    pub sources: SourceSet,
    /// Training iterations completed.
    pub iteration: u64,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    fn section(&mut self, name: &str, body: Writer) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    section: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u64()? as usize;
        if n > self.buf.len() / 8 {
            return Err(CheckpointError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec3(&mut self) -> Result<Vec3, CheckpointError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn invalid(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Invalid { section: self.section.to_owned(), message: message.into() }
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Softplus => 2,
        Activation::Sigmoid => 3,
    }
}

fn write_config(c: &ModelConfig) -> Writer {
    let mut w = Writer::default();
    w.u32(c.grid.spatial_res);
    w.u32(c.grid.time_res);
    w.u32(c.grid.channels);
    w.u32(c.heads.hidden_width);
    w.u32(c.heads.hidden_layers);
    w.u32(c.heads.sh_degree);
    w.u8(match c.heads.image_feature {
        ImageFeatureMode::Passthrough => 0,
        ImageFeatureMode::ShallowConv => 1,
    });
    w.f64(c.heads.r_min);
    w.u32(c.k);
    w.u32(c.num_sources);
    c.background.iter().for_each(|&v| w.f64(v));
    w.f64(c.radius_limits.min_px);
    w.f64(c.radius_limits.max_px);
    w.u32(c.tile_size);
    w
}

fn read_config(r: &mut Reader) -> Result<ModelConfig, CheckpointError> {
    let grid = GridConfig { spatial_res: r.u32()?, time_res: r.u32()?, channels: r.u32()? };
    let (hidden_width, hidden_layers, sh_degree) = (r.u32()?, r.u32()?, r.u32()?);
    let image_feature = match r.u8()? {
        0 => ImageFeatureMode::Passthrough,
        1 => ImageFeatureMode::ShallowConv,
        t => return Err(r.invalid(format!("unknown image feature mode {t}"))),
    };
    let heads = HeadConfig { hidden_width, hidden_layers, sh_degree, image_feature, r_min: r.f64()? };
    let k = r.u32()?;
    let num_sources = r.u32()?;
    let background = [r.f64()?, r.f64()?, r.f64()?];
    let radius_limits = RadiusLimits { min_px: r.f64()?, max_px: r.f64()? };
    let tile_size = r.u32()?;
    Ok(ModelConfig { grid, heads, k, num_sources, background, radius_limits, tile_size })
}

fn write_scene(s: &SceneSequence) -> Writer {
    let mut w = Writer::default();
    s.bbox.min.to_array().into_iter().chain(s.bbox.max.to_array()).for_each(|v| w.f64(v));
    w.u32(s.frames.len());
    for f in &s.frames {
        w.u32(f.len());
        for p in &f.positions {
            p.to_array().into_iter().for_each(|v| w.f64(v));
        }
        f.dynamic.iter().for_each(|&d| w.u8(d as u8));
    }
    w
}

fn read_scene(r: &mut Reader) -> Result<SceneSequence, CheckpointError> {
    let (min, max) = (r.vec3()?, r.vec3()?);
    let bbox = Aabb::new(min, max).map_err(|e| r.invalid(e.to_string()))?;
    let t = r.u32()?;
    let mut frames = Vec::with_capacity(t.min(1 << 16));
    for i in 0..t {
        let n = r.u32()?;
        if n > r.buf.len() / 25 {
            return Err(CheckpointError::Truncated);
        }
        let positions = (0..n).map(|_| r.vec3()).collect::<Result<Vec<_>, _>>()?;
        let dynamic = (0..n).map(|_| r.u8().map(|b| b != 0)).collect::<Result<Vec<_>, _>>()?;
        frames.push(PointCloudFrame::new(i, positions, dynamic).map_err(|e| r.invalid(e.to_string()))?);
    }
    // positions were clamped when saved, so rebuilding does not move them
    SceneSequence::new(bbox, frames).map_err(|e| r.invalid(e.to_string()))
}

fn write_planes(p: &FeaturePlaneSet) -> Writer {
    let mut w = Writer::default();
    for plane in &p.planes {
        w.u32(plane.rows);
        w.u32(plane.cols);
        w.u32(plane.channels);
        w.f64s(&plane.data);
    }
    w
}

fn read_planes(r: &mut Reader) -> Result<FeaturePlaneSet, CheckpointError> {
    let mut planes = Vec::with_capacity(NUM_PLANES);
    for _ in 0..NUM_PLANES {
        let (rows, cols, channels) = (r.u32()?, r.u32()?, r.u32()?);
        let data = r.f64s()?;
        if data.len() != rows * cols * channels {
            return Err(r.invalid(format!("plane of {rows}x{cols}x{channels} holds {} values", data.len())));
        }
        planes.push(FeaturePlane { rows, cols, channels, data });
    }
    Ok(FeaturePlaneSet { planes: planes.try_into().unwrap() })
}

fn write_mlp(w: &mut Writer, m: &Mlp) {
    w.u32(m.layers.len());
    for l in &m.layers {
        w.u32(l.inputs);
        w.u32(l.outputs);
        w.f64s(&l.weight);
        w.f64s(&l.bias);
    }
    w.u32(m.output_activations.len());
    m.output_activations.iter().for_each(|&a| w.u8(activation_tag(a)));
}

fn read_mlp(r: &mut Reader) -> Result<Mlp, CheckpointError> {
    let n = r.u32()?;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let (inputs, outputs) = (r.u32()?, r.u32()?);
        let (weight, bias) = (r.f64s()?, r.f64s()?);
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(r.invalid(format!("layer {inputs}->{outputs} has {} weights and {} biases", weight.len(), bias.len())));
        }
        layers.push(Linear { inputs, outputs, weight, bias });
    }
    let na = r.u32()?;
    let mut output_activations = Vec::with_capacity(na.min(1024));
    for _ in 0..na {
        output_activations.push(match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Softplus,
            3 => Activation::Sigmoid,
            t => return Err(r.invalid(format!("unknown activation {t}"))),
        });
    }
    if layers.is_empty() || layers.windows(2).any(|p| p[0].outputs != p[1].inputs) || layers.last().unwrap().outputs != na {
        return Err(r.invalid("inconsistent layer widths"));
    }
    Ok(Mlp { layers, output_activations })
}

fn write_heads(h: &HeadSet) -> Writer {
    let mut w = Writer::default();
    w.u32(h.sh_degree);
    w.f64(h.r_min);
    write_mlp(&mut w, &h.geometry);
    write_mlp(&mut w, &h.sh);
    write_mlp(&mut w, &h.blend);
    match &h.encoder {
        ImageEncoder::Passthrough => w.u8(0),
        ImageEncoder::ShallowConv(c) => {
            w.u8(1);
            w.f64s(&c.weight);
            w.f64s(&c.bias);
        }
    }
    w
}

fn read_heads(r: &mut Reader) -> Result<HeadSet, CheckpointError> {
    let sh_degree = r.u32()?;
    if sh_degree > peel4d_core::sh::MAX_DEGREE {
        return Err(r.invalid(format!("SH degree {sh_degree} above {}", peel4d_core::sh::MAX_DEGREE)));
    }
    let r_min = r.f64()?;
    let (geometry, sh, blend) = (read_mlp(r)?, read_mlp(r)?, read_mlp(r)?);
    let encoder = match r.u8()? {
        0 => ImageEncoder::Passthrough,
        1 => {
            let (weight, bias) = (r.f64s()?, r.f64s()?);
            let z = Conv3x3::zeros();
            if weight.len() != z.weight.len() || bias.len() != z.bias.len() {
                return Err(r.invalid("convolution has the wrong shape"));
            }
            ImageEncoder::ShallowConv(Conv3x3 { weight, bias })
        }
        t => return Err(r.invalid(format!("unknown encoder {t}"))),
    };
    Ok(HeadSet { geometry, sh, blend, encoder, sh_degree, r_min })
}

fn camera_values(c: &Camera) -> impl Iterator<Item = f64> {
    [c.fx, c.fy, c.cx, c.cy]
        .into_iter()
        .chain(c.rotation.to_row_major())
        .chain(c.translation.to_array())
        .chain([c.width as f64, c.height as f64, c.near, c.far])
}

fn write_sources(s: &SourceSet) -> Writer {
    let mut w = Writer::default();
    w.u32(s.cameras.len());
    for c in &s.cameras {
        camera_values(c).for_each(|v| w.f64(v));
    }
    w.u32(s.images.len());
    for frame in &s.images {
        for img in frame {
            w.0.extend_from_slice(&pngio::image_to_rgb8(img));
        }
    }
    w
}

fn read_sources(r: &mut Reader) -> Result<SourceSet, CheckpointError> {
    let v = r.u32()?;
    let mut cameras = Vec::with_capacity(v.min(1024));
    for _ in 0..v {
        let mut vals = [0.0; 20];
        for x in &mut vals {
            *x = r.f64()?;
        }
        let rot: [f64; 9] = vals[4..13].try_into().unwrap();
        let cam = Camera::new(
            vals[0],
            vals[1],
            vals[2],
            vals[3],
            Mat3::from_row_major(&rot),
            Vec3::new(vals[13], vals[14], vals[15]),
            vals[16] as u32,
            vals[17] as u32,
            vals[18],
            vals[19],
        )
        .map_err(|e| r.invalid(e.to_string()))?;
        cameras.push(cam);
    }
    let t = r.u32()?;
    let mut images = Vec::with_capacity(t.min(1 << 16));
    for _ in 0..t {
        let mut frame = Vec::with_capacity(v);
        for c in &cameras {
            let (w, h) = (c.width as usize, c.height as usize);
            frame.push(pngio::image_from_rgb8(w, h, r.take(w * h * 3)?));
        }
        images.push(frame);
    }
    Ok(SourceSet { cameras, images })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        let mut progress = Writer::default();
        progress.u64(self.iteration);
        w.section("config", write_config(&self.model.config));
        w.section("scene", write_scene(&self.model.scene));
        w.section("planes", write_planes(&self.model.planes));
        w.section("heads", write_heads(&self.model.heads));
        w.section("sources", write_sources(&self.sources));
        w.section("progress", progress);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, section: "header" };
        let magic: [u8; 4] = r.take(4).map_err(|_| CheckpointError::Magic(pad4(bytes)))?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(CheckpointError::Magic(magic));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut sections: Vec<(&str, &[u8])> = Vec::new();
        while !r.buf.is_empty() {
            let n = r.u32()?;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| r.invalid("section name is not UTF-8"))?;
            let len = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Truncated)?;
            sections.push((name, r.take(len)?));
        }
        let open = |name: &'static str| -> Result<Reader, CheckpointError> {
            let (n, buf) = sections.iter().find(|(n, _)| *n == name).ok_or(CheckpointError::MissingSection(name))?;
            Ok(Reader { buf, section: n })
        };
        let config = read_config(&mut open("config")?)?;
        let scene = read_scene(&mut open("scene")?)?;
        let planes = read_planes(&mut open("planes")?)?;
        let heads = read_heads(&mut open("heads")?)?;
        let sources = read_sources(&mut open("sources")?)?;
        let iteration = match open("progress") {
            Ok(mut r) => r.u64()?,
            Err(_) => 0,
        };
        if sources.images.len() != scene.num_frames() {
            return Err(CheckpointError::Invalid {
                section: "sources".into(),
                message: format!("{} frames of images for {} scene frames", sources.images.len(), scene.num_frames()),
            });
        }
        let model = SceneModel { scene, planes, heads, config };
        Ok(Self { model, sources, iteration })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn pad4(b: &[u8]) -> [u8; 4] {
    let mut m = [0; 4];
    m[..b.len().min(4)].copy_from_slice(&b[..b.len().min(4)]);
    m
}
